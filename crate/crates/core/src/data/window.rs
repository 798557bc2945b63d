use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, Split, VariableSchema};

/// One look-back/forecast example.
///
/// Exogenous rows cover all `L + H` steps: the first `L` belong to the
/// look-back window, the remaining `H` to the forecast window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInstance {
    /// Row index of the first look-back step; unique within a bundle.
    pub start: usize,
    pub y_past: Vec<f64>,
    /// `[L + H][C_dis]` discrete codes.
    pub x_dis: Vec<Vec<u32>>,
    /// `[L + H][C_con]` continuous values.
    pub x_con: Vec<Vec<f64>>,
    pub y_target: Vec<f64>,
    /// Phase of the first forecast step within the pattern period.
    pub phase0: usize,
}

impl WindowInstance {
    pub fn lookback(&self) -> usize {
        self.y_past.len()
    }

    pub fn horizon(&self) -> usize {
        self.y_target.len()
    }

    /// Row index of the first forecast step.
    pub fn first_forecast(&self) -> usize {
        self.start + self.lookback()
    }
}

/// Slides windows over the whole bundle.
pub fn make_windows(bundle: &DatasetBundle, schema: &VariableSchema, stride: usize) -> Vec<WindowInstance> {
    windows_in(bundle, schema, 0..bundle.len(), stride)
}

/// Slides windows over one partition; windows never cross its boundaries.
pub fn split_windows(
    bundle: &DatasetBundle,
    schema: &VariableSchema,
    split: Split,
    stride: usize,
) -> Vec<WindowInstance> {
    windows_in(bundle, schema, bundle.splits.range(split), stride)
}

fn windows_in(
    bundle: &DatasetBundle,
    schema: &VariableSchema,
    range: Range<usize>,
    stride: usize,
) -> Vec<WindowInstance> {
    let (l, h) = (schema.lookback, schema.horizon);
    let stride = stride.max(1);
    if range.len() < l + h {
        log::warn!(
            "range {range:?} shorter than lookback + horizon = {}; no windows",
            l + h
        );
        return Vec::new();
    }
    let count = (range.len() - l - h) / stride + 1;
    let period = schema.period as i64;
    (0..count)
        .map(|w| {
            let s = range.start + w * stride;
            let steps = s..s + l + h;
            WindowInstance {
                start: s,
                y_past: bundle.y[s..s + l].to_vec(),
                x_dis: steps
                    .clone()
                    .map(|t| bundle.x_dis.iter().map(|c| c[t]).collect())
                    .collect(),
                x_con: steps
                    .map(|t| bundle.x_con.iter().map(|c| c[t]).collect())
                    .collect(),
                y_target: bundle.y[s + l..s + l + h].to_vec(),
                phase0: bundle.timestamps[s + l].rem_euclid(period) as usize,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DiscreteVar, Splits};

    fn bundle(len: usize, period: usize) -> (VariableSchema, DatasetBundle) {
        let schema = VariableSchema {
            endogenous_name: "y".into(),
            discrete_vars: vec![DiscreteVar {
                name: "d".into(),
                vocab_size: 3,
            }],
            continuous_vars: vec!["c".into()],
            period,
            lookback: 4,
            horizon: 2,
        };
        let b = DatasetBundle {
            timestamps: (0..len as i64).collect(),
            y: (0..len).map(|i| i as f64).collect(),
            x_dis: vec![(0..len).map(|i| (i % 3) as u32).collect()],
            x_con: vec![(0..len).map(|i| -(i as f64)).collect()],
            splits: Splits::by_fraction(len, 1.0, 0.0).unwrap(),
        };
        (schema, b)
    }

    #[test]
    fn window_counts() {
        let (schema, b) = bundle(10, 4);
        assert_eq!(make_windows(&b, &schema, 1).len(), 5);
        assert_eq!(make_windows(&b, &schema, 4).len(), 2);
        let (schema, b) = bundle(5, 4);
        assert!(make_windows(&b, &schema, 1).is_empty());
    }

    #[test]
    fn window_contents_and_phase() {
        let (schema, b) = bundle(10, 4);
        let ws = make_windows(&b, &schema, 1);
        // first forecast index 6 -> phase 2
        let w = ws.iter().find(|w| w.first_forecast() == 6).unwrap();
        assert_eq!(w.phase0, 2);
        assert_eq!(w.y_past, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(w.y_target, vec![6.0, 7.0]);
        assert_eq!(w.x_dis.len(), 6);
        assert_eq!(w.x_con[5], vec![-7.0]);
    }

    #[test]
    fn phase_repeats_every_period() {
        let (schema, b) = bundle(40, 7);
        let ws = make_windows(&b, &schema, 1);
        for a in &ws {
            if let Some(c) = ws.iter().find(|c| c.first_forecast() == a.first_forecast() + 7) {
                assert_eq!(a.phase0, c.phase0);
            }
        }
    }
}
