use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// One labelled example.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Ordered labelled examples stored row-wise; labels are exactly `±1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    preprocessing: String,
    inputs: Array2<f64>,
    labels: Vec<f64>,
}

pub(crate) fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        preprocessing: impl Into<String>,
        inputs: Array2<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(Error::Shape("input dimension must be at least 1".into()));
        }
        labels.iter().try_for_each(|&y| check_label(y))?;
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("features must be finite".into()));
        }
        Ok(Self {
            name: name.into(),
            preprocessing: preprocessing.into(),
            inputs,
            labels,
        })
    }

    pub fn from_points(name: impl Into<String>, points: &[DataPoint]) -> Result<Self> {
        let d_x = points.first().map_or(0, |p| p.x.len());
        if points.iter().any(|p| p.x.len() != d_x) {
            return Err(Error::Shape("points have differing input dimensions".into()));
        }
        let flat: Vec<f64> = points.iter().flat_map(|p| p.x.iter().copied()).collect();
        let inputs = Array2::from_shape_vec((points.len(), d_x), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(name, "none", inputs, points.iter().map(|p| p.y).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn preprocessing(&self) -> &str {
        &self.preprocessing
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn x(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn y(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn point(&self, i: usize) -> DataPoint {
        DataPoint {
            x: self.inputs.row(i).to_vec(),
            y: self.labels[i],
        }
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Shape(format!("index {bad} out of range for {} points", self.len())));
        }
        Ok(Self {
            name: self.name.clone(),
            preprocessing: self.preprocessing.clone(),
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            name: self.name.clone(),
            preprocessing: self.preprocessing.clone(),
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        let inputs = ndarray::concatenate(Axis(0), &[self.inputs.view(), other.inputs.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            name: format!("{}+{}", self.name, other.name),
            preprocessing: self.preprocessing.clone(),
            inputs,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validates_labels_and_shapes() {
        assert!(Dataset::new("t", "none", array![[1.0], [2.0]], vec![1.0, -1.0]).is_ok());
        assert!(matches!(
            Dataset::new("t", "none", array![[1.0]], vec![0.5]),
            Err(Error::InvalidLabel(_))
        ));
        assert!(Dataset::new("t", "none", array![[1.0]], vec![1.0, 1.0]).is_err());
        assert!(Dataset::new("t", "none", array![[f64::INFINITY]], vec![1.0]).is_err());
    }

    #[test]
    fn select_and_concat() {
        let d = Dataset::new("t", "none", array![[1.0], [2.0], [3.0]], vec![1.0, -1.0, 1.0]).unwrap();
        let s = d.select(&[2, 0]).unwrap();
        assert_eq!(s.inputs(), array![[3.0], [1.0]]);
        assert_eq!(s.labels(), &[1.0, 1.0]);
        assert!(d.select(&[3]).is_err());
        let c = d.concat(&s).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(d.head(2).labels(), &[1.0, -1.0]);
        assert_eq!(d.point(1), DataPoint { x: vec![2.0], y: -1.0 });
    }
}
