//! SLO rule evaluation over raw-space telemetry frames.
//!
//! Each SLO rule is an AND of at least two SLI violation conditions and is
//! scoped per component: the rule fires when every condition holds
//! simultaneously at some single component. The SLA state is the OR of the
//! SLO states.
//!
//! The shipped default thresholds are illustrative operating points, not
//! values taken from any particular deployment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{MetricCatalog, TelemetryTable};

#[derive(Debug, Error, PartialEq)]
pub enum SlaError {
    #[error("rule {rule}: unknown metric {metric}")]
    MissingMetric { rule: String, metric: String },
    #[error("rule {rule}: {message}")]
    InvalidRule { rule: String, message: String },
}

/// Violation condition over one SLI. The SLI value is either a single metric
/// or a sum of metrics (written `a+b` in config files).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliExpr {
    /// Metric name, or `+`-joined metric names summed before comparison.
    pub metric: String,
    pub op: SliOp,
    #[serde(default)]
    pub threshold: f64,
    /// Bounds for `within` / `outside`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliOp {
    /// Violated when value > threshold (objective: value <= threshold).
    Gt,
    /// Violated when value < threshold (objective: value >= threshold).
    Lt,
    Ge,
    Le,
    /// Violated when value falls inside [lo, hi].
    Within,
    /// Violated when value falls outside [lo, hi] (objective: lo <= value <= hi).
    Outside,
}

impl SliExpr {
    fn metric_indices(&self, rule: &str) -> Result<Vec<usize>, SlaError> {
        self.metric
            .split('+')
            .map(|name| {
                let name = name.trim();
                MetricCatalog::index_of(name).ok_or_else(|| SlaError::MissingMetric {
                    rule: rule.to_string(),
                    metric: name.to_string(),
                })
            })
            .collect()
    }

    fn validate(&self, rule: &str) -> Result<(), SlaError> {
        self.metric_indices(rule)?;
        match self.op {
            SliOp::Within | SliOp::Outside => match (self.lo, self.hi) {
                (Some(lo), Some(hi)) if lo < hi => Ok(()),
                _ => Err(SlaError::InvalidRule {
                    rule: rule.to_string(),
                    message: format!("op {:?} needs lo < hi", self.op),
                }),
            },
            _ if self.threshold.is_finite() => Ok(()),
            _ => Err(SlaError::InvalidRule {
                rule: rule.to_string(),
                message: "threshold must be finite".into(),
            }),
        }
    }

    fn violated(&self, value: f64) -> bool {
        match self.op {
            SliOp::Gt => value > self.threshold,
            SliOp::Lt => value < self.threshold,
            SliOp::Ge => value >= self.threshold,
            SliOp::Le => value <= self.threshold,
            SliOp::Within => value >= self.lo.unwrap() && value <= self.hi.unwrap(),
            SliOp::Outside => value < self.lo.unwrap() || value > self.hi.unwrap(),
        }
    }
}

/// One SLO: an id plus at least two ANDed SLI conditions, any-component scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloRule {
    pub id: String,
    pub exprs: Vec<SliExpr>,
}

/// The rule set, serializable as a TOML block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloRuleSet {
    pub rules: Vec<SloRule>,
}

/// Per-rule violation states plus the OR aggregate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlaState {
    pub slo_states: Vec<bool>,
    pub sla: bool,
}

impl SloRuleSet {
    /// Pinned default rules: load, computation, disk, io.
    pub fn default_rules() -> Self {
        let gt = |metric: &str, threshold: f64| SliExpr {
            metric: metric.into(),
            op: SliOp::Gt,
            threshold,
            lo: None,
            hi: None,
        };
        let lt = |metric: &str, threshold: f64| SliExpr {
            metric: metric.into(),
            op: SliOp::Lt,
            threshold,
            lo: None,
            hi: None,
        };
        SloRuleSet {
            rules: vec![
                SloRule {
                    id: "load".into(),
                    exprs: vec![gt("load.avg_1_min", 1.5), gt("load.avg_5_min", 1.0)],
                },
                SloRule {
                    id: "computation".into(),
                    exprs: vec![lt("cpu.idle_perc", 10.0), gt("load.avg_1_min", 1.5)],
                },
                SloRule {
                    id: "disk".into(),
                    exprs: vec![gt("disk.space_used_perc", 90.0), gt("disk.inode_used_perc", 80.0)],
                },
                SloRule {
                    id: "io".into(),
                    exprs: vec![
                        gt("io.read_time_sec+io.write_time_sec", 1.0),
                        gt("io.write_req_sec", 100.0),
                    ],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SlaError> {
        for rule in &self.rules {
            if rule.exprs.len() < 2 {
                return Err(SlaError::InvalidRule {
                    rule: rule.id.clone(),
                    message: "an SLO rule combines at least two SLIs".into(),
                });
            }
            for expr in &rule.exprs {
                expr.validate(&rule.id)?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("rule set serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SlaError> {
        let set: SloRuleSet = toml::from_str(text).map_err(|e| SlaError::InvalidRule {
            rule: "<config>".into(),
            message: e.to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }
}

/// One timestamp of raw-space readings for every (component, metric) pair.
pub struct Frame<'a> {
    table: &'a TelemetryTable,
    row: usize,
}

impl<'a> Frame<'a> {
    pub fn new(table: &'a TelemetryTable, row: usize) -> Self {
        Frame { table, row }
    }

    fn sli_value(&self, node: usize, metrics: &[usize]) -> f64 {
        metrics.iter().map(|&m| self.table.get(self.row, node, m)).sum()
    }
}

/// True iff some single component violates every SLI condition of the rule.
pub fn evaluate_slo(rule: &SloRule, frame: &Frame<'_>) -> Result<bool, SlaError> {
    let indices: Vec<Vec<usize>> = rule
        .exprs
        .iter()
        .map(|e| e.metric_indices(&rule.id))
        .collect::<Result<_, _>>()?;
    for node in 0..frame.table.node_count() {
        let all_violated = rule
            .exprs
            .iter()
            .zip(&indices)
            .all(|(expr, idx)| expr.violated(frame.sli_value(node, idx)));
        if all_violated {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Evaluates every rule plus the OR aggregate.
pub fn evaluate_sla(rules: &SloRuleSet, frame: &Frame<'_>) -> Result<SlaState, SlaError> {
    let slo_states: Vec<bool> = rules
        .rules
        .iter()
        .map(|r| evaluate_slo(r, frame))
        .collect::<Result<_, _>>()?;
    let sla = slo_states.iter().any(|&s| s);
    Ok(SlaState { slo_states, sla })
}

/// Labels every timestamp of a raw-space table. Labels must be computed
/// before any quantile transform is applied.
pub fn label_dataset(table: &TelemetryTable, rules: &SloRuleSet) -> Result<Vec<SlaState>, SlaError> {
    (0..table.rows())
        .map(|row| evaluate_sla(rules, &Frame::new(table, row)))
        .collect()
}
