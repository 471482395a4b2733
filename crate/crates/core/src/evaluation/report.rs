use std::fmt::Write as _;
use std::str::FromStr;

use super::{ClassificationScores, EreScores};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Micro,
    Macro,
    Application,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Micro, Suite::Macro, Suite::Application];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Micro => "micro",
            Suite::Macro => "macro",
            Suite::Application => "application",
        }
    }

    /// Parses `micro`, `macro`, `application` or `all`.
    pub fn parse_selection(s: &str) -> Result<Vec<Suite>> {
        match s {
            "all" => Ok(Suite::ALL.to_vec()),
            other => Ok(vec![other.parse()?]),
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Suite::Micro => &["nll_test", "self_bleu"],
            Suite::Macro => &["adver_suc", "ere1", "ere2", "ere3", "mean_ere"],
            Suite::Application => &["cls_real", "cls_synthetic", "cls_mix"],
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}` (micro, macro, application, all)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SuiteResult<T> {
    NotRun,
    Skipped(String),
    Done(T),
}

impl<T> SuiteResult<T> {
    pub fn done(&self) -> Option<&T> {
        match self {
            SuiteResult::Done(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroMetrics {
    pub nll_test: f64,
    pub self_bleu: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroMetrics {
    pub adver_suc: f64,
    pub ere: EreScores,
}

/// One evaluation run. Serialized as a two-line CSV (header, row) whose
/// columns are those of the suites that were requested.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub run_id: String,
    pub seed: u64,
    pub micro: SuiteResult<MicroMetrics>,
    pub macro_metrics: SuiteResult<MacroMetrics>,
    pub application: SuiteResult<ClassificationScores>,
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")))
    }
}

impl MetricsReport {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        MetricsReport {
            run_id: run_id.into(),
            seed,
            micro: SuiteResult::NotRun,
            macro_metrics: SuiteResult::NotRun,
            application: SuiteResult::NotRun,
        }
    }

    /// Checks every populated field against its range.
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.micro.done() {
            if !(m.nll_test.is_finite() && m.nll_test >= 0.0) {
                return Err(Error::InvalidArgument(format!("nll_test = {} is not a finite non-negative value", m.nll_test)));
            }
            in_unit("self_bleu", m.self_bleu)?;
        }
        if let Some(m) = self.macro_metrics.done() {
            in_unit("adver_suc", m.adver_suc)?;
            for (k, &e) in m.ere.ere.iter().enumerate() {
                in_unit(&format!("ere{}", k + 1), e)?;
            }
            let mean = m.ere.ere.iter().sum::<f64>() / 3.0;
            if (mean - m.ere.mean).abs() > 1e-12 {
                return Err(Error::InvalidArgument("mean_ere is not the mean of the three probes".into()));
            }
        }
        if let Some(c) = self.application.done() {
            in_unit("cls_real", c.real)?;
            in_unit("cls_synthetic", c.synthetic)?;
            in_unit("cls_mix", c.mix)?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(&'static [&'static str], Option<Vec<f64>>)> {
        let mut out = Vec::new();
        let mut push = |suite: Suite, r: Option<Option<Vec<f64>>>| {
            if let Some(v) = r {
                out.push((suite.columns(), v));
            }
        };
        fn lift<T>(r: &SuiteResult<T>, f: impl Fn(&T) -> Vec<f64>) -> Option<Option<Vec<f64>>> {
            match r {
                SuiteResult::NotRun => None,
                SuiteResult::Skipped(_) => Some(None),
                SuiteResult::Done(v) => Some(Some(f(v))),
            }
        }
        push(Suite::Micro, lift(&self.micro, |m| vec![m.nll_test, m.self_bleu]));
        push(
            Suite::Macro,
            lift(&self.macro_metrics, |m| vec![m.adver_suc, m.ere.ere[0], m.ere.ere[1], m.ere.ere[2], m.ere.mean]),
        );
        push(Suite::Application, lift(&self.application, |c| vec![c.real, c.synthetic, c.mix]));
        out
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["run_id", "seed"];
        for (names, _) in self.cells() {
            cols.extend_from_slice(names);
        }
        cols.join(",")
    }

    /// Values use Rust's shortest round-trip formatting; skipped suites
    /// fill their columns with `skipped`.
    pub fn csv_row(&self) -> String {
        let mut cells = vec![self.run_id.clone(), self.seed.to_string()];
        for (names, values) in self.cells() {
            match values {
                Some(v) => cells.extend(v.iter().map(|x| x.to_string())),
                None => cells.extend(names.iter().map(|_| "skipped".to_string())),
            }
        }
        cells.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", self.csv_header(), self.csv_row())
    }

    pub fn summary(&self) -> String {
        let mut s = format!("run {} (seed {})\n", self.run_id, self.seed);
        let mut line = |suite: Suite, status: &str| {
            let _ = writeln!(s, "[{}] {status}", suite.name());
        };
        match &self.micro {
            SuiteResult::NotRun => {}
            SuiteResult::Skipped(why) => line(Suite::Micro, &format!("skipped: {why}")),
            SuiteResult::Done(m) => line(Suite::Micro, &format!("NLL-test {:.4}  self-BLEU {:.4}", m.nll_test, m.self_bleu)),
        }
        match &self.macro_metrics {
            SuiteResult::NotRun => {}
            SuiteResult::Skipped(why) => line(Suite::Macro, &format!("skipped: {why}")),
            SuiteResult::Done(m) => line(
                Suite::Macro,
                &format!(
                    "AdverSuc {:.4}  ERE {:.4} {:.4} {:.4}  mean ERE {:.4}",
                    m.adver_suc, m.ere.ere[0], m.ere.ere[1], m.ere.ere[2], m.ere.mean
                ),
            ),
        }
        match &self.application {
            SuiteResult::NotRun => {}
            SuiteResult::Skipped(why) => line(Suite::Application, &format!("skipped: {why}")),
            SuiteResult::Done(c) => {
                line(
                    Suite::Application,
                    &format!("accuracy real {:.4}  synthetic {:.4}  mix {:.4}", c.real, c.synthetic, c.mix),
                );
                for w in &c.warnings {
                    line(Suite::Application, &format!("warning: {w}"));
                }
            }
        }
        s
    }
}
