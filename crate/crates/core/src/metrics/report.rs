use std::fmt::Write as _;
use std::path::Path;

use super::stats::{paired_t_one_tailed, wilcoxon_rank_sum_one_tailed};
use crate::error::{Error, Result};

/// Per-subject scores of one method, in a shared subject order.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResults {
    pub name: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

/// One-tailed tests of "this method > `against`".
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub against: String,
    pub t_p: f64,
    pub rank_sum_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub name: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub psnr_star: bool,
    pub ssim_star: bool,
    /// Empty when there are fewer than two subjects.
    pub psnr_tests: Vec<Comparison>,
    pub ssim_tests: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub alpha: f64,
    pub subjects: usize,
    /// How the t-test pairs samples; subjects are shared across methods.
    pub t_test_pairing: &'static str,
    pub methods: Vec<MethodSummary>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn compare(values: &[&[f64]], names: &[&str], i: usize) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    for j in (0..values.len()).filter(|&j| j != i) {
        out.push(Comparison {
            against: names[j].to_string(),
            t_p: paired_t_one_tailed(values[i], values[j])?,
            rank_sum_p: wilcoxon_rank_sum_one_tailed(values[i], values[j])?,
        });
    }
    Ok(out)
}

fn starred(tests: &[Comparison], alpha: f64) -> bool {
    !tests.is_empty() && tests.iter().all(|c| c.t_p < alpha && c.rank_sum_p < alpha)
}

/// Means per method, plus a star for each metric where both tests reject
/// at `alpha` against every other method.
pub fn build_report(results: &[MethodResults], alpha: f64) -> Result<MetricsReport> {
    if results.len() < 2 {
        return Err(Error::invalid("a report compares at least two methods"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("significance level {alpha} outside (0, 1)")));
    }
    let subjects = results[0].psnr.len();
    if subjects == 0 {
        return Err(Error::invalid("no subjects to report"));
    }
    for r in results {
        if r.psnr.len() != subjects || r.ssim.len() != subjects {
            return Err(Error::shape(format!(
                "method `{}` has {} PSNR and {} SSIM values, expected {subjects}",
                r.name,
                r.psnr.len(),
                r.ssim.len()
            )));
        }
        if r.ssim.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::invalid(format!("method `{}` has SSIM outside [-1, 1]", r.name)));
        }
    }
    let names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    let psnrs: Vec<&[f64]> = results.iter().map(|r| r.psnr.as_slice()).collect();
    let ssims: Vec<&[f64]> = results.iter().map(|r| r.ssim.as_slice()).collect();
    let mut methods = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let (psnr_tests, ssim_tests) = if subjects >= 2 {
            (compare(&psnrs, &names, i)?, compare(&ssims, &names, i)?)
        } else {
            (Vec::new(), Vec::new())
        };
        methods.push(MethodSummary {
            name: r.name.clone(),
            psnr: r.psnr.clone(),
            ssim: r.ssim.clone(),
            mean_psnr: mean(&r.psnr),
            mean_ssim: mean(&r.ssim),
            psnr_star: starred(&psnr_tests, alpha),
            ssim_star: starred(&ssim_tests, alpha),
            psnr_tests,
            ssim_tests,
        });
    }
    Ok(MetricsReport {
        alpha,
        subjects,
        t_test_pairing: "paired",
        methods,
    })
}

/// Largest p-value over the comparisons, i.e. the one deciding the star.
fn worst(tests: &[Comparison], pick: fn(&Comparison) -> f64) -> Option<f64> {
    tests.iter().map(pick).reduce(f64::max)
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn to_table(&self) -> String {
        let width = self.methods.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>11}  {:>8}", "method", "PSNR (dB)", "SSIM");
        for m in &self.methods {
            let psnr = format!("{:.2}{}", m.mean_psnr, if m.psnr_star { "*" } else { " " });
            let ssim = format!("{:.4}{}", m.mean_ssim, if m.ssim_star { "*" } else { " " });
            let _ = writeln!(s, "{:<width$}  {:>11}  {:>8}", m.name, psnr, ssim);
        }
        if self.subjects >= 2 {
            let _ = writeln!(
                s,
                "* greater than every other method by a {} one-tailed t-test and a one-tailed Wilcoxon rank-sum test, alpha = {}, n = {}",
                self.t_test_pairing, self.alpha, self.subjects
            );
        } else {
            let _ = writeln!(s, "(single subject: significance tests not applicable)");
        }
        s
    }

    /// One row per method: means, star flags and the deciding p-values.
    pub fn write_delimited(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let to_err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{other:?}")),
        };
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        w.write_record([
            "method",
            "mean_psnr_db",
            "mean_ssim",
            "psnr_star",
            "ssim_star",
            "psnr_t_p",
            "psnr_rank_sum_p",
            "ssim_t_p",
            "ssim_rank_sum_p",
            "t_test",
            "subjects",
        ])
        .map_err(to_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |p| format!("{p:.6e}"));
        for m in &self.methods {
            w.write_record([
                m.name.clone(),
                format!("{:.6}", m.mean_psnr),
                format!("{:.6}", m.mean_ssim),
                m.psnr_star.to_string(),
                m.ssim_star.to_string(),
                opt(worst(&m.psnr_tests, |c| c.t_p)),
                opt(worst(&m.psnr_tests, |c| c.rank_sum_p)),
                opt(worst(&m.ssim_tests, |c| c.t_p)),
                opt(worst(&m.ssim_tests, |c| c.rank_sum_p)),
                self.t_test_pairing.to_string(),
                self.subjects.to_string(),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn method(name: &str, psnr: Vec<f64>, ssim: Vec<f64>) -> MethodResults {
        MethodResults {
            name: name.into(),
            psnr,
            ssim,
        }
    }

    /// Per-subject values with the given mean and a fixed zero-mean wobble.
    fn around(mean: f64, n: usize, spread: f64, phase: usize) -> Vec<f64> {
        let wobble: Vec<f64> = (0..n).map(|i| (((i + phase) * 7) % n) as f64 - (n - 1) as f64 / 2.0).collect();
        let scale = spread / (n as f64 / 2.0);
        wobble.iter().map(|w| mean + w * scale).collect()
    }

    #[test]
    fn uniform_improvement_is_starred() {
        let base: Vec<f64> = (0..8).map(|i| 30.0 + 0.3 * (i as f64 * 1.3).sin()).collect();
        let better: Vec<f64> = base.iter().map(|v| v + 1.0).collect();
        let ssim_b: Vec<f64> = (0..8).map(|i| 0.9 + 0.003 * (i as f64).cos()).collect();
        let ssim_a: Vec<f64> = ssim_b.iter().map(|v| v + 0.01).collect();
        let r = build_report(&[method("A", better, ssim_a), method("B", base, ssim_b)], 0.05).unwrap();
        let a = r.method("A").unwrap();
        assert!(a.psnr_star && a.ssim_star);
        // Constant differences hit the t-test's zero-variance rule; 16 pooled
        // values are past the exact rank-sum size, so that p is approximate.
        assert_eq!(a.psnr_tests[0].t_p, 0.0);
        assert!(a.psnr_tests[0].rank_sum_p < 0.05);
        let b = r.method("B").unwrap();
        assert!(!b.psnr_star && !b.ssim_star);
    }

    #[test]
    fn identical_methods_are_not_starred() {
        let v = vec![30.0, 31.0, 29.5, 30.2];
        let s = vec![0.9, 0.91, 0.89, 0.9];
        let r = build_report(&[method("A", v.clone(), s.clone()), method("B", v, s)], 0.05).unwrap();
        assert!(r.methods.iter().all(|m| !m.psnr_star && !m.ssim_star));
    }

    #[test]
    fn three_method_table_stars_the_clear_winner() {
        // Synthetic per-subject values with fixed means; only the comparison
        // structure matters here.
        let rows = [("middle wins", [36.0, 38.0, 35.1], 1usize), ("last wins", [32.0, 33.5, 34.4], 2usize)];
        for (label, means, winner) in rows {
            let names = ["first", "second", "third"];
            let results: Vec<MethodResults> = names
                .iter()
                .zip(means)
                .enumerate()
                .map(|(k, (n, m))| method(n, around(m, 20, 0.6, k), around(0.95, 20, 0.01, k)))
                .collect();
            let r = build_report(&results, 0.05).unwrap();
            for (k, m) in r.methods.iter().enumerate() {
                assert!((m.mean_psnr - means[k]).abs() < 1e-9, "{label}");
                assert_eq!(m.psnr_star, k == winner, "{label} {}", m.name);
            }
            let table = r.to_table();
            assert!(table.contains(&format!("{:.2}*", means[winner])), "{table}");
        }
    }

    #[test]
    fn rejects_ragged_and_degenerate_input() {
        let good = method("A", vec![1.0, 2.0], vec![0.5, 0.5]);
        assert!(build_report(&[good.clone()], 0.05).is_err());
        assert!(build_report(&[good.clone(), method("B", vec![1.0], vec![0.5])], 0.05).is_err());
        assert!(build_report(&[good.clone(), method("B", vec![1.0, 2.0], vec![0.5, 1.5])], 0.05).is_err());
        assert!(build_report(&[good.clone(), good], 1.5).is_err());
    }

    #[test]
    fn single_subject_has_no_tests() {
        let r = build_report(
            &[method("A", vec![33.0], vec![0.95]), method("B", vec![31.0], vec![0.93])],
            0.05,
        )
        .unwrap();
        assert!(r.methods.iter().all(|m| m.psnr_tests.is_empty() && !m.psnr_star));
        assert!(r.to_table().contains("33.00"));
    }

    #[test]
    fn delimited_output() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let r = build_report(
            &[
                method("EDSSR", vec![34.0, 35.0, 34.5], vec![0.97, 0.98, 0.975]),
                method("BSP", vec![31.0, 32.0, 31.5], vec![0.95, 0.96, 0.955]),
            ],
            0.05,
        )
        .unwrap();
        r.write_delimited(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method,mean_psnr_db,mean_ssim,psnr_star"));
        assert!(lines[1].starts_with("EDSSR,34.500000,0.975000,"));
        assert!(lines[1].contains(",paired,3"));
    }
}
