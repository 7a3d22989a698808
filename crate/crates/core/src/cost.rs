//! Labor time and dollar cost of building a chunker.
//!
//! Both annotation and rule writing are charged per hour of human time
//! plus machine time; time the annotator spends waiting for the machine
//! to pick the next batch is not labor.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::EvalReport;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("{field} must be a non-negative number, got {value}")]
    Negative { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Annotation,
    RuleWriting,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Annotation => "annotation",
            Method::RuleWriting => "rule-writing",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "annotation" => Some(Method::Annotation),
            "rule-writing" => Some(Method::RuleWriting),
            _ => None,
        }
    }

    /// Default machine cost in dollars per hour.
    pub fn default_machine_rate(self) -> f64 {
        match self {
            Method::Annotation => 0.24,
            Method::RuleWriting => 0.12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Infrastructure development cost, dollars.
    pub idc: f64,
    /// Sentences of gold data needed up front.
    pub s0: f64,
    /// Cost of one gold sentence, dollars.
    pub ac_tb: f64,
    /// Labor, dollars per hour.
    pub lc: f64,
    /// Machine cycles, dollars per hour.
    pub mc: f64,
    pub method: Method,
}

impl CostParams {
    /// The example rates; gold sentences are priced at 0 since their
    /// cost is unknown.
    pub fn defaults(method: Method) -> Self {
        CostParams {
            idc: 0.0,
            s0: 100.0,
            ac_tb: 0.0,
            lc: 12.0,
            mc: method.default_machine_rate(),
            method,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (field, value) in [
            ("idc", self.idc),
            ("s0", self.s0),
            ("ac_tb", self.ac_tb),
            ("lc", self.lc),
            ("mc", self.mc),
        ] {
            check_nonneg(field, value)?;
        }
        Ok(())
    }
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams::defaults(Method::Annotation)
    }
}

fn check_nonneg(field: &'static str, value: f64) -> Result<(), CostError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(CostError::Negative { field, value })
    }
}

/// `idc + s0 * ac_tb + hours * (lc + mc)`.
pub fn monetary_cost(params: &CostParams, hours: f64) -> Result<f64, CostError> {
    params.validate()?;
    check_nonneg("hours", hours)?;
    Ok(params.idc + params.s0 * params.ac_tb + hours * (params.lc + params.mc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    BatchServed,
    AnnotationSubmitted,
    RuleListSubmitted,
    FeedbackViewed,
    EvalRequested,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::BatchServed => "batch-served",
            EventKind::AnnotationSubmitted => "annotation-submitted",
            EventKind::RuleListSubmitted => "rule-list-submitted",
            EventKind::FeedbackViewed => "feedback-viewed",
            EventKind::EvalRequested => "eval-requested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    /// Seconds since the session started.
    pub seconds: f64,
    pub kind: EventKind,
    /// Batch id or other reference into the session log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<u64>,
}

impl SessionEvent {
    pub fn new(seconds: f64, kind: EventKind) -> Self {
        SessionEvent {
            seconds,
            kind,
            payload: None,
        }
    }

    pub fn with_payload(mut self, payload: u64) -> Self {
        self.payload = Some(payload);
        self
    }
}

/// Stretch of human work, in seconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn seconds(&self) -> f64 {
        self.end - self.start
    }
}

/// Periods the human was working.
///
/// A served batch is worked on until its submission. Rule writing runs
/// from the session start to the first rule list and then between
/// consecutive rule lists. Unmatched events are logged and skipped.
pub fn labor_intervals(events: &[SessionEvent]) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut open_batch: Option<(f64, Option<u64>)> = None;
    let mut last_rules = 0.0;
    let mut last_seen = f64::NEG_INFINITY;
    for e in events {
        if e.seconds < last_seen {
            log::warn!("event at {}s is earlier than the one before it", e.seconds);
        }
        last_seen = last_seen.max(e.seconds);
        match e.kind {
            EventKind::BatchServed => {
                if let Some((t, _)) = open_batch {
                    log::warn!("batch served at {t}s was never submitted");
                }
                open_batch = Some((e.seconds, e.payload));
            }
            EventKind::AnnotationSubmitted => match open_batch.take() {
                Some((t, id)) if id.is_none() || e.payload.is_none() || id == e.payload => {
                    if e.seconds >= t {
                        out.push(Interval {
                            start: t,
                            end: e.seconds,
                        });
                    } else {
                        log::warn!("submission at {}s precedes its batch", e.seconds);
                    }
                }
                Some((t, id)) => {
                    log::warn!(
                        "submission for {:?} does not match batch {:?} served at {t}s",
                        e.payload,
                        id
                    );
                    open_batch = Some((t, id));
                }
                None => log::warn!("submission at {}s has no served batch", e.seconds),
            },
            EventKind::RuleListSubmitted => {
                if e.seconds >= last_rules {
                    out.push(Interval {
                        start: last_rules,
                        end: e.seconds,
                    });
                }
                last_rules = e.seconds;
            }
            EventKind::FeedbackViewed | EventKind::EvalRequested => {}
        }
    }
    if let Some((t, _)) = open_batch {
        log::warn!("batch served at {t}s was never submitted");
    }
    out
}

/// Total labor in hours.
pub fn labor_time(events: &[SessionEvent]) -> f64 {
    labor_intervals(events)
        .iter()
        .fold(0.0, |acc, i| acc + i.seconds())
        / 3600.0
}

/// Labor seconds accumulated by wall-clock time `t`.
pub fn labor_seconds_until(intervals: &[Interval], t: f64) -> f64 {
    intervals
        .iter()
        .fold(0.0, |acc, i| acc + (i.end.min(t) - i.start).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub minutes: f64,
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
}

/// Scores each checkpoint and places it on a labor-time axis.
/// Checkpoints are `(seconds since session start, model)`.
pub fn learning_curve<M>(
    events: &[SessionEvent],
    checkpoints: &[(f64, M)],
    mut evaluate: impl FnMut(&M) -> EvalReport,
) -> Vec<CurvePoint> {
    let intervals = labor_intervals(events);
    let mut out: Vec<CurvePoint> = Vec::with_capacity(checkpoints.len());
    for (t, model) in checkpoints {
        let report = evaluate(model);
        let mut minutes = labor_seconds_until(&intervals, *t) / 60.0;
        if let Some(prev) = out.last() {
            minutes = minutes.max(prev.minutes);
        }
        out.push(CurvePoint {
            minutes,
            precision: report.precision,
            recall: report.recall,
            fmeasure: report.fmeasure,
        });
    }
    out
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("minutes,precision,recall,f\n");
    for p in points {
        let _ = writeln!(
            s,
            "{:.3},{:.6},{:.6},{:.6}",
            p.minutes, p.precision, p.recall, p.fmeasure
        );
    }
    s
}
