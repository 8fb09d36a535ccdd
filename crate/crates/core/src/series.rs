use serde::{Deserialize, Serialize};

/// One series on the common time grid; `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub id: String,
    pub values: Vec<Option<f64>>,
}

impl TimeSeriesSample {
    pub fn new(id: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        TimeSeriesSample {
            id: id.into(),
            values,
        }
    }

    pub fn from_dense(id: impl Into<String>, values: &[f64]) -> Self {
        Self::new(id, values.iter().map(|&v| Some(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(t, v)| v.map(|v| (t, v)))
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.n_obs();
        (n > 0).then(|| self.observed().map(|(_, v)| v).sum::<f64>() / n as f64)
    }

    /// Multiplies every observation by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        TimeSeriesSample {
            id: self.id.clone(),
            values: self.values.iter().map(|v| v.map(|v| v * factor)).collect(),
        }
    }
}
