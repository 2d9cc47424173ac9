use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, FilterError, Result};
use crate::filter::ObservationModel;
use crate::scalar::Scalar;

/// How one measured channel depends on the filter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelMap {
    /// `h = y_index`.
    Component { index: usize },
    /// `h = log₁₀(Σ_i 10^{y_i}) + offset` over log₁₀-transformed components.
    LogSum {
        indices: Vec<usize>,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationChannel {
    pub name: String,
    pub map: ChannelMap,
    /// Measurement-noise variance in observation units.
    pub variance: f64,
}

/// Independent scalar channels with diagonal noise.
#[derive(Debug, Clone)]
pub struct ChannelObservationModel<T: Scalar> {
    pub state_dim: usize,
    pub channels: Vec<ObservationChannel>,
    noise: DMatrix<T>,
}

impl<T: Scalar> ChannelObservationModel<T> {
    pub fn new(state_dim: usize, channels: Vec<ObservationChannel>) -> Result<Self> {
        for ch in &channels {
            let indices = match &ch.map {
                ChannelMap::Component { index } => std::slice::from_ref(index),
                ChannelMap::LogSum { indices, .. } => indices.as_slice(),
            };
            if indices.is_empty() || indices.iter().any(|&i| i >= state_dim) {
                return Err(dim_err(format!("channel {} references states outside 0..{state_dim}", ch.name)));
            }
            if !(ch.variance > 0.0 && ch.variance.is_finite()) {
                return Err(FilterError::Config(format!("channel {} needs a positive noise variance", ch.name)));
            }
        }
        let noise = DMatrix::from_diagonal(&DVector::from_iterator(
            channels.len(),
            channels.iter().map(|c| T::lit(c.variance)),
        ));
        Ok(Self { state_dim, channels, noise })
    }

    /// The same channels over a larger state whose leading components are
    /// the original ones.
    pub fn widened(&self, state_dim: usize) -> Result<Self> {
        if state_dim < self.state_dim {
            return Err(dim_err(format!("cannot narrow observation from {} to {state_dim}", self.state_dim)));
        }
        Ok(Self { state_dim, channels: self.channels.clone(), noise: self.noise.clone() })
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    fn log_sum(y: &DVector<T>, indices: &[usize]) -> (T, Vec<T>) {
        let ten = T::lit(10.0);
        let top = indices.iter().fold(-T::infinity(), |a, &i| a.max(y[i]));
        let terms: Vec<T> = indices.iter().map(|&i| ten.powf(y[i] - top)).collect();
        let total = terms.iter().fold(T::zero(), |a, &v| a + v);
        (top + total.log10(), terms.into_iter().map(|v| v / total).collect())
    }
}

impl<T: Scalar> ObservationModel<T> for ChannelObservationModel<T> {
    fn obs_dim(&self) -> usize {
        self.channels.len()
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn observe(&self, y: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| match &ch.map {
                ChannelMap::Component { index } => y[*index],
                ChannelMap::LogSum { indices, offset } => Self::log_sum(y, indices).0 + T::lit(*offset),
            }),
        )
    }

    fn jacobian(&self, y: &DVector<T>) -> DMatrix<T> {
        let mut h = DMatrix::zeros(self.channels.len(), self.state_dim);
        for (r, ch) in self.channels.iter().enumerate() {
            match &ch.map {
                ChannelMap::Component { index } => h[(r, *index)] = T::one(),
                ChannelMap::LogSum { indices, .. } => {
                    let (_, weights) = Self::log_sum(y, indices);
                    for (&i, w) in indices.iter().zip(weights) {
                        h[(r, i)] += w;
                    }
                }
            }
        }
        h
    }

    fn noise(&self) -> &DMatrix<T> {
        &self.noise
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn viral_load() -> ChannelObservationModel<f64> {
        ChannelObservationModel::new(
            4,
            vec![ObservationChannel {
                name: "viral_load".into(),
                map: ChannelMap::LogSum { indices: vec![2, 3], offset: 0.0 },
                variance: 0.01,
            }],
        )
        .unwrap()
    }

    #[test]
    fn equal_components_add_log_two() {
        let h = viral_load().observe(&dvector![7.0, 6.0, 3.5, 3.5]);
        assert!((h[0] - (3.5 + 2f64.log10())).abs() < 1e-14);
    }

    #[test]
    fn single_component_limit() {
        let y = dvector![7.0, 6.0, 3.5, -400.0];
        let o = viral_load();
        assert!((o.observe(&y)[0] - 3.5).abs() < 1e-14);
        let h = o.jacobian(&y);
        assert_eq!(h[(0, 2)], 1.0);
        assert_eq!(h[(0, 3)], 0.0);
    }

    #[test]
    fn nonpositive_variance_is_rejected() {
        let r = ChannelObservationModel::<f64>::new(
            2,
            vec![ObservationChannel { name: "x".into(), map: ChannelMap::Component { index: 0 }, variance: 0.0 }],
        );
        assert!(r.is_err());
    }
}
