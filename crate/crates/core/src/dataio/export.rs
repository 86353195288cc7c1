use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generative::GenerativeTrace;
use crate::inference::PosteriorTrace;
use crate::numerics::{Tensor, Var};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            sorted[lo] + w * (sorted[hi] - sorted[lo])
        }
    }
}

/// One CSV (`step,truth,point,q10,q50,q90`) and one SVG plot per channel.
///
/// `point` is `[C×T]`, `samples` is `[M×C×T]` and `truth`, when given,
/// `[C×T]`. Without samples the quantile columns repeat the point forecast;
/// without truth its column is left empty.
pub fn export_forecast(
    dir: &Path,
    names: &[String],
    point: &Tensor,
    samples: &Tensor,
    truth: Option<&Tensor>,
) -> Result<Vec<PathBuf>> {
    let (c, t) = match point.shape() {
        [c, t] => (*c, *t),
        s => return Err(Error::Contract(format!("point forecast must be [C×T], got {s:?}"))),
    };
    let m = samples.shape().first().copied().unwrap_or(0);
    if names.len() != c || (m > 0 && samples.shape() != [m, c, t]) || truth.is_some_and(|y| y.shape() != [c, t]) {
        return Err(Error::Contract("forecast export shapes disagree".into()));
    }
    let mut written = Vec::new();
    for (ch, name) in names.iter().enumerate() {
        let mut csv = String::from("step,truth,point,q10,q50,q90\n");
        let mut bands = Vec::with_capacity(t);
        for step in 0..t {
            let p = point.at(ch, step);
            let mut draws: Vec<f64> = (0..m).map(|s| samples.data()[(s * c + ch) * t + step]).collect();
            draws.sort_by(f64::total_cmp);
            let q = if m == 0 {
                [p, p, p]
            } else {
                [quantile(&draws, 0.1), quantile(&draws, 0.5), quantile(&draws, 0.9)]
            };
            let y = truth.map(|y| y.at(ch, step));
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                step + 1,
                y.map(fmt_f64).unwrap_or_default(),
                fmt_f64(p),
                fmt_f64(q[0]),
                fmt_f64(q[1]),
                fmt_f64(q[2])
            );
            bands.push((y, p, q[0], q[2]));
        }
        let stem = sanitize(name);
        let csv_path = dir.join(format!("forecast_{stem}.csv"));
        write_atomic(&csv_path, csv.as_bytes())?;
        let svg_path = dir.join(format!("forecast_{stem}.svg"));
        write_atomic(&svg_path, forecast_svg(name, &bands).as_bytes())?;
        written.push(csv_path);
        written.push(svg_path);
    }
    Ok(written)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn forecast_svg(title: &str, rows: &[(Option<f64>, f64, f64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const PAD: f64 = 24.0;
    let values = rows
        .iter()
        .flat_map(|&(y, p, lo, hi)| y.into_iter().chain([p, lo, hi]))
        .filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let n = rows.len().max(2) - 1;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let line = |pts: Vec<(f64, f64)>| {
        pts.iter()
            .map(|(a, b)| format!("{a:.2},{b:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut band: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (x(i), y(r.3))).collect();
    band.extend(rows.iter().enumerate().rev().map(|(i, r)| (x(i), y(r.2))));
    let point = rows.iter().enumerate().map(|(i, r)| (x(i), y(r.1))).collect();
    let truth: Vec<_> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.0.map(|v| (x(i), y(v))))
        .collect();

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(svg, "<text x=\"{PAD}\" y=\"16\" font-size=\"12\">{}</text>", xml_escape(title));
    let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"orange\" fill-opacity=\"0.2\"/>", line(band));
    if !truth.is_empty() {
        let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>", line(truth));
    }
    let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"orange\"/>", line(point));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes a matrix with a `c0,c1,...` header.
pub fn write_matrix_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = (0..width).map(|j| format!("c{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Stacks row `row` of each per-step tensor into a `steps × width` matrix.
fn per_step_matrix(steps: &[Var<'_>], row: usize) -> Vec<Vec<f64>> {
    steps.iter().map(|v| v.value().row(row).to_vec()).collect()
}

/// CSV matrices of the patch outputs, hidden states and latent parameters of
/// both models for batch row `row`.
pub fn export_latents(dir: &Path, gen: &GenerativeTrace<'_>, post: &PosteriorTrace<'_>, row: usize) -> Result<Vec<PathBuf>> {
    let gen_mean: Vec<_> = gen.latents.iter().map(|l| l.mean).collect();
    let gen_logvar: Vec<_> = gen.latents.iter().map(|l| l.logvar).collect();
    let inf_mean: Vec<_> = post.latents.iter().map(|l| l.mean).collect();
    let inf_logvar: Vec<_> = post.latents.iter().map(|l| l.logvar).collect();
    let groups: [(&str, &[Var<'_>]); 8] = [
        ("gen_x_p", &gen.patch_outputs),
        ("gen_h", &gen.hidden),
        ("gen_z_mean", &gen_mean),
        ("gen_z_logvar", &gen_logvar),
        ("inf_h", &post.fwd_hidden),
        ("inf_g", &post.bwd_hidden),
        ("inf_z_mean", &inf_mean),
        ("inf_z_logvar", &inf_logvar),
    ];
    let mut written = Vec::new();
    for (name, steps) in groups {
        if steps.is_empty() {
            continue;
        }
        let path = dir.join(format!("{name}.csv"));
        write_matrix_csv(&path, &per_step_matrix(steps, row))?;
        written.push(path);
    }
    Ok(written)
}
