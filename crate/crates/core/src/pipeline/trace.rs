//! Episode traces: the ordered record of what the agent did to one image,
//! exported as line-delimited records for inspection and replay.

use crate::error::{Error, Result};

/// One test-time episode record. `steps` holds the transformation labels in
/// order; `q_values` holds the chosen action's Q-value per step, including
/// the final stop (so `q_values.len() == steps.len() + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub image_id: usize,
    pub true_label: usize,
    pub steps: Vec<String>,
    pub predicted: usize,
    pub q_values: Vec<f64>,
}

impl EpisodeTrace {
    pub fn render_line(&self) -> String {
        let steps = if self.steps.is_empty() {
            "-".to_string()
        } else {
            self.steps.join(",")
        };
        let q = self
            .q_values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "image_id={} true_label={} predicted={} steps={} q={}",
            self.image_id, self.true_label, self.predicted, steps, q
        )
    }

    pub fn parse_line(line: &str) -> Result<EpisodeTrace> {
        let mut image_id = None;
        let mut true_label = None;
        let mut predicted = None;
        let mut steps = None;
        let mut q_values = None;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("trace field {field:?} is not key=value"))
            })?;
            match key {
                "image_id" => image_id = Some(parse_usize(key, value)?),
                "true_label" => true_label = Some(parse_usize(key, value)?),
                "predicted" => predicted = Some(parse_usize(key, value)?),
                "steps" => {
                    steps = Some(if value == "-" {
                        Vec::new()
                    } else {
                        value.split(',').map(|s| s.to_string()).collect()
                    })
                }
                "q" => {
                    q_values = Some(
                        value
                            .split(',')
                            .map(|s| {
                                s.parse::<f64>().map_err(|_| {
                                    Error::InvalidArgument(format!(
                                        "trace q value {s:?} is not a number"
                                    ))
                                })
                            })
                            .collect::<Result<Vec<f64>>>()?,
                    )
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown trace field {key:?}"
                    )))
                }
            }
        }
        let missing = |name: &str| Error::InvalidArgument(format!("trace line missing {name}"));
        Ok(EpisodeTrace {
            image_id: image_id.ok_or_else(|| missing("image_id"))?,
            true_label: true_label.ok_or_else(|| missing("true_label"))?,
            predicted: predicted.ok_or_else(|| missing("predicted"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
            q_values: q_values.ok_or_else(|| missing("q"))?,
        })
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("trace field {key}={value:?} is not an integer")))
}

pub fn render_traces(traces: &[EpisodeTrace]) -> String {
    let mut out = String::new();
    for trace in traces {
        out.push_str(&trace.render_line());
        out.push('\n');
    }
    out
}

pub fn parse_traces(text: &str) -> Result<Vec<EpisodeTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(EpisodeTrace::parse_line)
        .collect()
}
