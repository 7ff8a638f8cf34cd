//! Closed-form parameter and multiply-add (MAdds) accounting.
//!
//! Conventions: a 1×1 convolution costs `2·c_in·c_out·n / groups` MAdds
//! (bias adds included); a matrix product costs `2k − 1` per output entry.
//! Softmax/ReLU, the residual step and the frame mean are not modeled.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregator::{AggregatorConfig, AggregatorKind, StageCounters};
use crate::error::{Error, Result};

/// Parameter counts per layer. `others` is the residual scale slot and is
/// always reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub wq: u64,
    pub wk: u64,
    pub wv: u64,
    pub others: u64,
    pub total: u64,
}

/// MAdds per stage for a given frame count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaddCounts {
    pub n: u64,
    pub wq_f: u64,
    pub wk_f: u64,
    pub wv_f: u64,
    /// `Qᵀ K` / `Gmm(Q, K)`.
    pub attention_product: u64,
    /// Softmax / ReLU; always zero.
    pub activation: u64,
    /// `V A` / `Gmm(V, A)`.
    pub output_product: u64,
    pub total: u64,
}

impl MaddCounts {
    /// True when every stage equals the instrumented kernel tally.
    pub fn matches(&self, measured: &StageCounters) -> bool {
        self.stage_pairs(measured).iter().all(|(_, a, m)| a == m)
    }

    /// `(stage, analytic, measured)` triples.
    pub fn stage_pairs(&self, measured: &StageCounters) -> [(&'static str, u64, u64); 5] {
        [
            ("wq_f", self.wq_f, measured.wq.madds()),
            ("wk_f", self.wk_f, measured.wk.madds()),
            ("wv_f", self.wv_f, measured.wv.madds()),
            ("attention_product", self.attention_product, measured.attention.madds()),
            ("output_product", self.output_product, measured.output.madds()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub config: AggregatorConfig,
    pub params: ParamCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub madds: Option<MaddCounts>,
    pub not_modeled: Vec<String>,
}

fn not_modeled() -> Vec<String> {
    vec!["residual scale (s·F_o + F)".into(), "frame mean".into()]
}

pub fn param_count(config: &AggregatorConfig) -> Result<CostReport> {
    config.validate()?;
    let AggregatorConfig { kind, m, m1, g1, g2, shared } = *config;
    let (m, m1, g1, g2) = (m as u64, m1 as u64, g1 as u64, g2 as u64);
    let (wq, wv) = match kind {
        AggregatorKind::Avg | AggregatorKind::Max => (0, 0),
        AggregatorKind::Nl => (m * m1 + m1, m * m + m),
        AggregatorKind::Hgnl => {
            let q_block = (m / g1) * (m1 / g1) + m1 / g1;
            let v_block = (m / g2) * (m / g2) + m / g2;
            if shared {
                (q_block, v_block)
            } else {
                (g1 * q_block, g2 * v_block)
            }
        }
    };
    let params = ParamCounts { wq, wk: wq, wv, others: 0, total: 2 * wq + wv };
    Ok(CostReport { config: *config, params, madds: None, not_modeled: not_modeled() })
}

/// Parameter counts plus per-stage MAdds at `n` frames. Sharing does not
/// change MAdds.
pub fn madds(config: &AggregatorConfig, n: usize) -> Result<CostReport> {
    if n == 0 {
        return Err(Error::config("frame count n must be at least 1"));
    }
    let mut report = param_count(config)?;
    let AggregatorConfig { kind, m, m1, g1, g2, .. } = *config;
    let (m, m1, g1, g2, n) = (m as u64, m1 as u64, g1 as u64, g2 as u64, n as u64);
    let (wq_f, wv_f, attention_product, output_product) = match kind {
        AggregatorKind::Avg | AggregatorKind::Max => (0, 0, 0, 0),
        AggregatorKind::Nl => (2 * m * m1 * n, 2 * m * m * n, n * n * (2 * m1 - 1), m * n * (2 * n - 1)),
        AggregatorKind::Hgnl => (
            2 * m * m1 * n / g1,
            2 * m * m * n / g2,
            n * n * 2 * m1 - g2 * n * n,
            m * n * (2 * n - 1),
        ),
    };
    report.madds = Some(MaddCounts {
        n,
        wq_f,
        wk_f: wq_f,
        wv_f,
        attention_product,
        activation: 0,
        output_product,
        total: 2 * wq_f + wv_f + attention_product + output_product,
    });
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// Index of the numerator config.
    pub baseline: usize,
    /// Index of the denominator config.
    pub candidate: usize,
    /// `params(baseline) / params(candidate)`; `None` when the candidate
    /// has no parameters.
    pub param_ratio: Option<f64>,
    pub madds_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: u64,
    pub reports: Vec<CostReport>,
    pub rows: Vec<ComparisonRow>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b != 0).then(|| a as f64 / b as f64)
}

/// All ordered pairwise ratios between `configs` at `n` frames.
pub fn compare(configs: &[AggregatorConfig], n: usize) -> Result<Comparison> {
    if configs.is_empty() {
        return Err(Error::config("compare needs at least one configuration"));
    }
    let reports = configs.iter().map(|c| madds(c, n)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for (j, b) in reports.iter().enumerate() {
            if i == j {
                continue;
            }
            let (ma, mb) = (a.madds.unwrap(), b.madds.unwrap());
            rows.push(ComparisonRow {
                baseline: i,
                candidate: j,
                param_ratio: ratio(a.params.total, b.params.total),
                madds_ratio: ratio(ma.total, mb.total),
            });
        }
    }
    Ok(Comparison { n: n as u64, reports, rows })
}

impl Comparison {
    pub fn row(&self, baseline: usize, candidate: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.baseline == baseline && r.candidate == candidate)
    }
}

/// The four configurations of the efficiency tables: NL at `m1 = m/2` and
/// `m/8`, HG-NL at `m1 = m/8` with `g1 = 16`, `g2 = 8`, and its shared
/// variant (`m = 1024`).
pub fn paper_configs() -> Vec<(String, AggregatorConfig)> {
    let m = 1024;
    vec![
        ("NL (m1=m/2)".into(), AggregatorConfig::nl(m, m / 2)),
        ("NL (m1=m/8)".into(), AggregatorConfig::nl(m, m / 8)),
        ("HG-NL (m1=m/8)".into(), AggregatorConfig::hgnl(m, m / 8, 16, 8, false)),
        ("HG-NL shared (m1=m/8)".into(), AggregatorConfig::hgnl(m, m / 8, 16, 8, true)),
    ]
}

/// Per-stage MAdds as polynomials in `n`: `quadratic·n² + linear·n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NPolynomial {
    pub quadratic: i64,
    pub linear: i64,
}

impl NPolynomial {
    pub fn eval(&self, n: u64) -> i64 {
        self.quadratic * (n * n) as i64 + self.linear * n as i64
    }
}

impl std::fmt::Display for NPolynomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.quadratic, self.linear) {
            (0, 0) => f.write_str("0"),
            (q, 0) => write!(f, "{q}n^2"),
            (0, l) => write!(f, "{l}n"),
            (q, l) if l < 0 => write!(f, "{q}n^2 - {}n", -l),
            (q, l) => write!(f, "{q}n^2 + {l}n"),
        }
    }
}

/// Symbolic-in-`n` form of each modeled stage, in
/// `[wq_f, wk_f, wv_f, attention_product, output_product]` order.
pub fn madds_polynomials(config: &AggregatorConfig) -> Result<[NPolynomial; 5]> {
    // Every stage is at most quadratic in n, so two evaluations pin it down.
    let at = |n| madds(config, n).map(|r| r.madds.unwrap());
    let (one, two) = (at(1)?, at(2)?);
    let fit = |a: u64, b: u64| {
        let (a, b) = (a as i64, b as i64);
        let quadratic = (b - 2 * a) / 2;
        NPolynomial { quadratic, linear: a - quadratic }
    };
    Ok([
        fit(one.wq_f, two.wq_f),
        fit(one.wk_f, two.wk_f),
        fit(one.wv_f, two.wv_f),
        fit(one.attention_product, two.attention_product),
        fit(one.output_product, two.output_product),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperTables {
    pub n: u64,
    pub parameters: Vec<LabeledReport>,
    /// The shared variant is omitted: its MAdds equal the unshared ones.
    pub madds: Vec<LabeledReport>,
}

pub fn paper_tables(n: usize) -> Result<PaperTables> {
    let mut parameters = Vec::new();
    let mut madds_rows = Vec::new();
    for (label, cfg) in paper_configs() {
        let report = madds(&cfg, n)?;
        if !cfg.shared {
            madds_rows.push(LabeledReport { label: label.clone(), report: report.clone() });
        }
        parameters.push(LabeledReport { label, report });
    }
    Ok(PaperTables { n: n as u64, parameters, madds: madds_rows })
}

fn render_grid(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - c.chars().count();
            if i == 0 {
                let _ = write!(out, "| {c}{} ", " ".repeat(pad));
            } else {
                let _ = write!(out, "| {}{c} ", " ".repeat(pad));
            }
        }
        out.push_str("|\n");
    };
    let sep = |out: &mut String| {
        for w in widths.iter().take(cols) {
            let _ = write!(out, "+{}", "-".repeat(w + 2));
        }
        out.push_str("+\n");
    };
    sep(out);
    line(out, header);
    sep(out);
    for r in rows {
        line(out, r);
    }
    sep(out);
}

/// Parameter table: rows `W_q, W_k, W_v, Others, All`, one column per report.
pub fn render_param_table(reports: &[LabeledReport]) -> String {
    let mut header = vec![String::new()];
    header.extend(reports.iter().map(|r| r.label.clone()));
    let cell = |f: fn(&ParamCounts) -> u64| -> Vec<String> {
        reports.iter().map(|r| f(&r.report.params).to_string()).collect()
    };
    let mut rows = Vec::new();
    for (name, f) in [
        ("W_q", (|p: &ParamCounts| p.wq) as fn(&ParamCounts) -> u64),
        ("W_k", |p| p.wk),
        ("W_v", |p| p.wv),
    ] {
        let mut r = vec![name.to_string()];
        r.extend(cell(f));
        rows.push(r);
    }
    let mut others = vec!["Others".to_string()];
    others.extend(reports.iter().map(|_| "--".to_string()));
    rows.push(others);
    let mut all = vec!["All".to_string()];
    all.extend(cell(|p| p.total));
    rows.push(all);
    let mut out = String::new();
    render_grid(&mut out, &header, &rows);
    out
}

/// MAdds table: each cell shows the polynomial in `n` and its value at the
/// reports' `n`.
pub fn render_madds_table(reports: &[LabeledReport]) -> Result<String> {
    let mut header = vec![String::new()];
    header.extend(reports.iter().map(|r| r.label.clone()));
    let polys = reports
        .iter()
        .map(|r| madds_polynomials(&r.report.config))
        .collect::<Result<Vec<_>>>()?;
    let names = ["W_qF", "W_kF", "W_vF", "Q^TK / Gmm(Q,K)", "VA / Gmm(V,A)"];
    let mut rows = Vec::new();
    for (stage, name) in names.iter().enumerate() {
        let mut r = vec![name.to_string()];
        for (rep, p) in reports.iter().zip(&polys) {
            let n = rep.report.madds.map_or(1, |m| m.n);
            r.push(format!("{} = {}", p[stage], p[stage].eval(n)));
        }
        rows.push(r);
        if stage == 3 {
            let mut act = vec!["Softmax / Relu".to_string()];
            act.extend(reports.iter().map(|_| "--".to_string()));
            rows.push(act);
        }
    }
    let mut out = String::new();
    render_grid(&mut out, &header, &rows);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nl_half_width() {
        let r = param_count(&AggregatorConfig::nl(1024, 512)).unwrap();
        assert_eq!(r.params.wq, 524_800);
        assert_eq!(r.params.wv, 1_049_600);
        assert_eq!(r.params.total, 2_099_200);
    }

    #[test]
    fn hgnl_counts() {
        let r = param_count(&AggregatorConfig::hgnl(1024, 128, 16, 8, false)).unwrap();
        assert_eq!((r.params.wq, r.params.wk, r.params.wv, r.params.total), (8_320, 8_320, 132_096, 148_736));
        let r = param_count(&AggregatorConfig::hgnl(1024, 128, 16, 8, true)).unwrap();
        assert_eq!((r.params.wq, r.params.wv, r.params.total), (520, 16_512, 17_552));
        assert_eq!(r.params.others, 0);
    }

    #[test]
    fn symbolic_table_cells() {
        let nl = madds(&AggregatorConfig::nl(1024, 512), 8).unwrap().madds.unwrap();
        assert_eq!(nl.wq_f, 8_388_608); // m²n
        let hg = madds(&AggregatorConfig::hgnl(1024, 128, 16, 8, false), 8).unwrap().madds.unwrap();
        assert_eq!(hg.wv_f, 2_097_152); // 2m²n/g2
        assert_eq!(hg.wq_f, 1024 * 1024 * 8 / (4 * 16));
        assert_eq!(hg.attention_product, 64 * 1024 / 4 - 8 * 64);
        assert_eq!(hg.output_product, 1024 * 8 * 15);
        assert_eq!(hg.activation, 0);
    }

    #[test]
    fn shared_does_not_change_madds() {
        let a = madds(&AggregatorConfig::hgnl(64, 16, 8, 4, false), 5).unwrap().madds;
        let b = madds(&AggregatorConfig::hgnl(64, 16, 8, 4, true), 5).unwrap().madds;
        assert_eq!(a, b);
    }

    #[test]
    fn ratios() {
        let cmp = compare(
            &paper_configs().into_iter().map(|(_, c)| c).collect::<Vec<_>>(),
            8,
        )
        .unwrap();
        let r = |a, b| cmp.row(a, b).unwrap().param_ratio.unwrap();
        assert!((r(1, 2) - 1_312_000.0 / 148_736.0).abs() < 1e-12);
        assert!((r(0, 2) - 14.113).abs() < 1e-3);
        assert!((r(1, 3) - 74.749).abs() < 1e-3);
        assert_eq!(cmp.rows.len(), 12);
    }

    #[test]
    fn pooling_is_free() {
        let r = madds(&AggregatorConfig::avg(32), 4).unwrap();
        assert_eq!(r.params.total, 0);
        assert_eq!(r.madds.unwrap().total, 0);
        let cmp = compare(&[AggregatorConfig::nl(8, 4), AggregatorConfig::avg(8)], 3).unwrap();
        assert_eq!(cmp.row(0, 1).unwrap().param_ratio, None);
    }

    #[test]
    fn polynomials_reproduce_formulas() {
        let cfg = AggregatorConfig::hgnl(1024, 128, 16, 8, false);
        let p = madds_polynomials(&cfg).unwrap();
        assert_eq!(p[0].to_string(), "16384n");
        assert_eq!(p[2].to_string(), "262144n");
        assert_eq!(p[3].to_string(), "248n^2");
        assert_eq!(p[4].to_string(), "2048n^2 - 1024n");
        let direct = madds(&cfg, 25).unwrap().madds.unwrap();
        assert_eq!(p[4].eval(25) as u64, direct.output_product);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(madds(&AggregatorConfig::nl(8, 4), 0).is_err());
        assert!(param_count(&AggregatorConfig::hgnl(8, 4, 3, 1, false)).is_err());
        assert!(compare(&[], 3).is_err());
    }

    #[test]
    fn table_render_contains_cells() {
        let t = paper_tables(8).unwrap();
        let text = render_param_table(&t.parameters);
        for v in ["524800", "131200", "8320", "520", "1049600", "132096", "16512", "2099200", "1312000", "148736", "17552"] {
            assert!(text.contains(v), "missing {v}\n{text}");
        }
        let text = render_madds_table(&t.madds).unwrap();
        assert!(text.contains("Softmax / Relu"));
        assert!(text.contains("8388608"));
    }
}
