//! Bit-stable CSV emitters: fixed column order, `{:.16e}` floats (17
//! significant digits, round-trip exact), LF line endings.

use efco::analysis::{BifurcationDiagram, BifurcationPoint, CalibrationCurve, FamilyParam, FixedPointReport};
use efco::currentmode::{InterferenceReport, RmsSeries, TimeSeries};
use efco::sim::SimTrace;

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

fn escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV file held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub name: String,
    pub text: String,
    pub rows: usize,
    width: usize,
}

impl Csv {
    pub fn new(name: &str, header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { name: name.into(), text, rows: 0, width: header.len() }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        debug_assert_eq!(fields.len(), self.width, "{}: row width", self.name);
        let line: Vec<String> = fields.iter().map(|f| escape(f.as_ref())).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
        self.rows += 1;
    }

    /// A `#`-prefixed line outside the table proper.
    pub fn marker(&mut self, line: &str) {
        self.text.push('#');
        self.text.push_str(line);
        self.text.push('\n');
    }
}

/// Per-tick records of every device, ordered by (time, device). A diverged
/// run ends with a `#truncated,...` marker row.
pub fn trace_csv(trace: &SimTrace) -> Csv {
    let mut csv = Csv::new("trace.csv", &["step", "time_s", "device_id", "x", "xi_o", "xi_w"]);
    let mut rows: Vec<(f64, usize, usize)> = trace
        .devices
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |k| (d.time_s[k], i, k)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, i, k) in rows {
        let d = &trace.devices[i];
        csv.row(&[
            d.step[k].to_string(),
            fmt_f64(d.time_s[k]),
            i.to_string(),
            fmt_f64(d.x[k]),
            fmt_f64(d.xi_o[k]),
            fmt_f64(d.xi_w[k]),
        ]);
    }
    if let Some(div) = trace.divergence {
        csv.marker(&format!(
            "truncated,step={},device={},value={}",
            div.step,
            div.device,
            fmt_f64(div.value)
        ));
    }
    csv
}

pub fn events_csv(trace: &SimTrace) -> Csv {
    let mut csv = Csv::new("events.csv", &["time_s", "step", "device_id", "event", "value"]);
    for e in &trace.events {
        csv.row(&[
            fmt_f64(e.time_s),
            e.step.to_string(),
            e.device.to_string(),
            e.kind.label().to_string(),
            fmt_f64(e.kind.value()),
        ]);
    }
    csv
}

/// Long format: one row per (point, component); component i carries the
/// i-th state coordinate and the i-th eigenvalue.
pub fn fixed_points_csv(report: &FixedPointReport) -> Csv {
    let mut csv = Csv::new(
        "fixed_points.csv",
        &["point", "component", "state", "eig_re", "eig_im", "eig_abs", "stable"],
    );
    for (p, fp) in report.points.iter().enumerate() {
        for (c, (&s, l)) in fp.state.iter().zip(&fp.eigenvalues).enumerate() {
            csv.row(&[
                p.to_string(),
                c.to_string(),
                fmt_f64(s),
                fmt_f64(l.re),
                fmt_f64(l.im),
                fmt_f64(l.norm()),
                fp.stable.to_string(),
            ]);
        }
    }
    csv
}

/// Stationary states along a parameter grid with their dominant multipliers.
pub fn stability_csv(param: FamilyParam, sweep: &[(f64, FixedPointReport)]) -> Csv {
    let mut csv = Csv::new(
        "stability.csv",
        &[param.name(), "point", "x", "dominant_re", "dominant_im", "dominant_abs", "stable"],
    );
    for (v, report) in sweep {
        for (p, fp) in report.points.iter().enumerate() {
            let l = fp.dominant();
            csv.row(&[
                fmt_f64(*v),
                p.to_string(),
                fmt_f64(fp.state[0]),
                fmt_f64(l.re),
                fmt_f64(l.im),
                fmt_f64(l.norm()),
                fp.stable.to_string(),
            ]);
        }
    }
    csv
}

/// (param, sample) pairs of a bifurcation diagram.
pub fn diagram_csv(d: &BifurcationDiagram) -> Csv {
    let mut csv = Csv::new("diagram.csv", &[d.param.name(), "sample"]);
    for p in &d.points {
        let v = fmt_f64(p.value);
        for &s in &p.samples {
            csv.row(&[v.clone(), fmt_f64(s)]);
        }
    }
    csv
}

pub fn scan_points_csv(d: &BifurcationDiagram) -> Csv {
    let mut csv = Csv::new("scan_points.csv", &[d.param.name(), "samples", "diverged_runs"]);
    for p in &d.points {
        csv.row(&[fmt_f64(p.value), p.samples.len().to_string(), p.diverged_runs.to_string()]);
    }
    csv
}

pub fn bifurcations_csv(points: &[BifurcationPoint]) -> Csv {
    let mut csv = Csv::new(
        "bifurcations.csv",
        &["param", "value", "kind", "multiplier_re", "multiplier_im", "bracket_lo", "bracket_hi"],
    );
    for b in points {
        csv.row(&[
            b.param.name().to_string(),
            fmt_f64(b.value),
            b.kind.label().to_string(),
            fmt_f64(b.multiplier.re),
            fmt_f64(b.multiplier.im),
            fmt_f64(b.bracket.0),
            fmt_f64(b.bracket.1),
        ]);
    }
    csv
}

/// `metric,value` table.
pub fn metrics_csv(name: &str, metrics: &[(String, String)]) -> Csv {
    let mut csv = Csv::new(name, &["metric", "value"]);
    for (k, v) in metrics {
        csv.row(&[k, v]);
    }
    csv
}

pub fn series_csv(name: &str, header: [&str; 2], x: impl IntoIterator<Item = f64>, y: &[f64]) -> Csv {
    let mut csv = Csv::new(name, &header);
    for (a, &b) in x.into_iter().zip(y) {
        csv.row(&[fmt_f64(a), fmt_f64(b)]);
    }
    csv
}

pub fn curve_csv(name: &str, curve: &CalibrationCurve) -> Csv {
    let mut csv = Csv::new(name, &[curve.param.as_str(), "ratio"]);
    for k in &curve.knots {
        csv.row(&[fmt_f64(k.param), fmt_f64(k.ratio)]);
    }
    csv
}

pub fn signal_csv(s: &TimeSeries) -> Csv {
    series_csv("signal.csv", ["time_s", "value"], (0..s.values.len()).map(|k| s.time(k)), &s.values)
}

pub fn rms_csv(r: &RmsSeries) -> Csv {
    series_csv("rms.csv", ["time_s", "value"], r.time_s.iter().copied(), &r.values)
}

pub fn detection_csv(r: &InterferenceReport, candidates: &[f64]) -> Csv {
    let mut csv = Csv::new("detection.csv", &["freq_hz", "power", "label", "amplitude", "detected"]);
    for c in &r.components {
        csv.row(&[
            fmt_f64(c.freq_hz),
            fmt_f64(c.power),
            c.label_text(candidates),
            fmt_f64(c.amplitude),
            c.detected.to_string(),
        ]);
    }
    csv
}

pub fn current_events_csv(r: &InterferenceReport) -> Csv {
    let mut csv = Csv::new("current_events.csv", &["time_s", "rms_before", "rms_after", "step", "class"]);
    for e in &r.events {
        let class = match e.class {
            efco::currentmode::EventClass::DipoleEvent => "dipole_event",
            efco::currentmode::EventClass::ObjectEvent => "object_event",
        };
        csv.row(&[
            fmt_f64(e.time_s),
            fmt_f64(e.rms_before),
            fmt_f64(e.rms_after),
            fmt_f64(e.step),
            class.to_string(),
        ]);
    }
    csv
}
