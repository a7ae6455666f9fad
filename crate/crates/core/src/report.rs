//! CSV and SVG artifact writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bounds::EfficiencyCertificate;
use crate::error::Result;
use crate::mechanism::TaxLedger;
use crate::mpc::TrajectoryRecord;
use crate::plant::{DELTA, OMEGA, P_VALVE, STATES_PER_AREA};

/// `printf("%.12g")`.
pub fn fmt_g(x: f64) -> String {
    fmt_g_prec(x, 12)
}

pub fn fmt_g_prec(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    // Round to p significant digits first; the exponent of the rounded value picks the style.
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

const STATE_NAMES: [&str; STATES_PER_AREA] = ["omega", "pmech", "pv", "delta"];

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        out.push_str(&c);
        first = false;
    }
    out.push('\n');
}

/// One row per applied input: `step, time_s, area{i}_{state}..., u{i}...`.
pub fn trajectory_csv(traj: &TrajectoryRecord, dt: f64) -> String {
    let areas = traj.num_agents();
    let mut header = vec!["step".to_string(), "time_s".to_string()];
    for i in 1..=areas {
        header.extend(STATE_NAMES.iter().map(|s| format!("area{i}_{s}")));
    }
    let input_dim = traj.inputs.first().map_or(areas, |u| u.len());
    header.extend((1..=input_dim).map(|i| format!("u{i}")));
    let mut out = String::new();
    push_row(&mut out, header);
    for t in 0..traj.steps() {
        let mut row = vec![t.to_string(), fmt_g(t as f64 * dt)];
        row.extend(traj.states[t].iter().map(|v| fmt_g(*v)));
        row.extend(traj.inputs[t].iter().map(|v| fmt_g(*v)));
        push_row(&mut out, row);
    }
    out
}

/// `step, c{i}..., cum_c{i}..., cum_total`.
pub fn costs_csv(traj: &TrajectoryRecord) -> String {
    let n = traj.num_agents();
    let mut header = vec!["step".to_string()];
    header.extend((1..=n).map(|i| format!("c{i}")));
    header.extend((1..=n).map(|i| format!("cum_c{i}")));
    header.push("cum_total".into());
    let mut out = String::new();
    push_row(&mut out, header);
    let mut cum = vec![0.0; n];
    for (t, costs) in traj.stage_costs.iter().enumerate() {
        for (acc, c) in cum.iter_mut().zip(costs) {
            *acc += c;
        }
        let mut row = vec![t.to_string()];
        row.extend(costs.iter().map(|c| fmt_g(*c)));
        row.extend(cum.iter().map(|c| fmt_g(*c)));
        row.push(fmt_g(cum.iter().sum()));
        push_row(&mut out, row);
    }
    out
}

/// `step, p{i}..., K{i}..., pi{i}...`.
pub fn taxes_csv(ledger: &TaxLedger) -> String {
    let n = ledger.num_agents();
    let mut header = vec!["step".to_string()];
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.extend((1..=n).map(|i| format!("K{i}")));
    header.extend((1..=n).map(|i| format!("pi{i}")));
    let mut out = String::new();
    push_row(&mut out, header);
    for t in 0..ledger.steps() {
        let mut row = vec![t.to_string()];
        row.extend((0..n).map(|i| fmt_g(ledger.taxes[i][t])));
        row.extend((0..n).map(|i| fmt_g(ledger.marginal[i][t])));
        row.extend((0..n).map(|i| fmt_g(ledger.tax_to_go[i][t])));
        push_row(&mut out, row);
    }
    out
}

/// A certificate with the measured per-step MPC time.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateRow {
    pub certificate: EfficiencyCertificate,
    pub mpc_step_ms: f64,
}

/// `T, alpha, rho, gamma, eps, valid, mpc_step_ms`; `eps` is `inf` when no certificate exists.
pub fn certificate_csv(rows: &[CertificateRow]) -> String {
    let mut out = String::from("T,alpha,rho,gamma,eps,valid,mpc_step_ms\n");
    for r in rows {
        let c = &r.certificate;
        push_row(
            &mut out,
            [
                c.horizon.to_string(),
                fmt_g(c.alpha),
                fmt_g(c.rho),
                fmt_g(c.gamma),
                fmt_g(c.eps.unwrap_or(f64::INFINITY)),
                c.valid().to_string(),
                fmt_g(r.mpc_step_ms),
            ],
        );
    }
    out
}

/// Plain CSV from a header and pre-formatted rows.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    push_row(&mut out, header.iter().map(|s| s.to_string()));
    for r in rows {
        push_row(&mut out, r.iter().cloned());
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Static line plot with axes, five ticks per axis and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { y0.abs() * 0.1 };
        y0 -= pad;
        y1 += pad;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#ddd"/>"##, top + ph);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 16.0, fmt_g_prec(xv, 4));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, fmt_g_prec(yv, 4));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = left + pw - 110.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `(file name, title, y label, state offset)` of the emitted response plots.
pub const RESPONSE_PLOTS: [(&str, &str, &str, usize); 3] = [
    ("omega.svg", "Frequency deviation", "delta omega (p.u.)", OMEGA),
    ("delta.svg", "Rotor angle deviation", "delta delta (rad)", DELTA),
    ("pv.svg", "Valve position deviation", "delta P_v (p.u.)", P_VALVE),
];

pub fn response_plots(traj: &TrajectoryRecord, dt: f64) -> Vec<(&'static str, String)> {
    RESPONSE_PLOTS
        .iter()
        .map(|&(name, title, y_label, offset)| {
            let series: Vec<Series> = traj
                .partition
                .states
                .iter()
                .enumerate()
                .map(|(i, range)| Series {
                    label: format!("area {}", i + 1),
                    points: traj
                        .states
                        .iter()
                        .enumerate()
                        .map(|(t, x)| (t as f64 * dt, x[range.start + offset]))
                        .collect(),
                })
                .collect();
            (name, line_plot_svg(title, "time (s)", y_label, &series))
        })
        .collect()
}
