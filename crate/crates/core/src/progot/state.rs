use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::binio::{read_array, read_f64, read_floats, read_len, write_floats};
use crate::entropic::displacement_batch;
use crate::geometry::{CostModel, PointCloud};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PGOT";
const VERSION: u32 = 1;

/// One step of a fitted progressive map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgStep {
    /// Weight-free target potential `g - eps log b`.
    pub g: Array1<f64>,
    pub eps: f64,
    pub alpha: f64,
}

/// Everything needed to apply a fitted progressive map to new points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgState {
    pub target: PointCloud,
    pub steps: Vec<ProgStep>,
    pub model: CostModel,
}

impl ProgState {
    pub fn new(target: PointCloud, steps: Vec<ProgStep>, model: CostModel) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidParameter(
                "a progressive map needs at least one step".into(),
            ));
        }
        for s in &steps {
            if s.g.len() != target.len() {
                return Err(Error::DimensionMismatch {
                    expected: target.len(),
                    got: s.g.len(),
                });
            }
            if !s.g.iter().all(|v| v.is_finite()) || !(s.eps > 0.0) || !(s.alpha > 0.0 && s.alpha <= 1.0) {
                return Err(Error::InvalidParameter("invalid step in progressive map".into()));
            }
        }
        Ok(Self { target, steps, model })
    }

    /// Index of the last step.
    pub fn k(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn transport(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xs =
            Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(self.transport_batch(&xs)?.into_raw_vec_and_offset().0)
    }

    /// Apply the map to every row of `xs`; rows are processed independently.
    pub fn transport_batch(&self, xs: &Array2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.target.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.target.dim(),
                got: xs.ncols(),
            });
        }
        let mut y = xs.to_owned();
        let last = self.k();
        for (k, step) in self.steps.iter().enumerate() {
            let z = displacement_batch(&self.target, &step.g, step.eps, &self.model, &y, None);
            if k == last {
                y -= &z;
            } else {
                y.scaled_add(-step.alpha, &z);
            }
        }
        Ok(y)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.target.len();
        let d = self.target.dim();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        w.write_all(&(m as u64).to_le_bytes())?;
        w.write_all(&(d as u64).to_le_bytes())?;
        w.write_all(&self.model.p().to_le_bytes())?;
        for s in &self.steps {
            w.write_all(&s.eps.to_le_bytes())?;
            w.write_all(&s.alpha.to_le_bytes())?;
            write_floats(&mut w, s.g.iter())?;
        }
        write_floats(&mut w, self.target.weights().iter())?;
        write_floats(&mut w, self.target.points().iter())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let magic: [u8; 4] = read_array(&mut r)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a PGOT file".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported PGOT version {version}")));
        }
        let k = read_len(&mut r)?;
        let m = read_len(&mut r)?;
        let d = read_len(&mut r)?;
        let p = read_f64(&mut r)?;
        let model = CostModel::new(p).map_err(|e| Error::Format(e.to_string()))?;
        if m == 0 || d == 0 {
            return Err(Error::Format("empty target in PGOT file".into()));
        }
        let mut steps = Vec::new();
        for _ in 0..=k {
            let eps = read_f64(&mut r)?;
            let alpha = read_f64(&mut r)?;
            let g = Array1::from(read_floats(&mut r, m)?);
            steps.push(ProgStep { g, eps, alpha });
        }
        let b = Array1::from(read_floats(&mut r, m)?);
        let y =
            Array2::from_shape_vec((m, d), read_floats(&mut r, m * d)?).map_err(|e| Error::Format(e.to_string()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after PGOT payload".into()));
        }
        let target = PointCloud::new(y, b).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(target, steps, model).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Progressive map at a single point.
pub fn progot_transport(state: &ProgState, x: &[f64]) -> Result<Vec<f64>> {
    state.transport(x)
}

pub fn progot_transport_batch(state: &ProgState, xs: &Array2<f64>) -> Result<Array2<f64>> {
    state.transport_batch(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_state() -> ProgState {
        let target = PointCloud::new(array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.25]], array![0.2, 0.5, 0.3]).unwrap();
        let steps = vec![
            ProgStep {
                g: array![0.1, -0.3, 1.0 / 3.0],
                eps: 0.05,
                alpha: 0.25,
            },
            ProgStep {
                g: array![f64::MIN_POSITIVE, 7.0, -2.5e-17],
                eps: 0.01,
                alpha: 1.0,
            },
        ];
        ProgState::new(target, steps, CostModel::new(1.5).unwrap()).unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let state = sample_state();
        let mut buf = Vec::new();
        state.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PGOT");
        assert_eq!(buf.len(), 4 + 4 + 3 * 8 + 8 + 2 * (2 + 3) * 8 + 3 * 8 + 6 * 8);
        let back = ProgState::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, state);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut buf = Vec::new();
        sample_state().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(ProgState::read_from(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(
            ProgState::read_from(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(ProgState::read_from(long.as_slice()), Err(Error::Format(_))));
        let mut version = buf;
        version[4] = 9;
        assert!(matches!(
            ProgState::read_from(version.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn single_target_collapses() {
        let target = PointCloud::from_rows(&[vec![3.0, -1.0]]).unwrap();
        let state = ProgState::new(
            target,
            vec![ProgStep {
                g: array![0.4],
                eps: 0.1,
                alpha: 0.3,
            }],
            CostModel::sq_euclidean(),
        )
        .unwrap();
        for x in [[0.0, 0.0], [10.0, 5.0], [-2.0, 7.5]] {
            let y = progot_transport(&state, &x).unwrap();
            assert!((y[0] - 3.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_steps() {
        let target = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let model = CostModel::sq_euclidean();
        assert!(ProgState::new(target.clone(), vec![], model).is_err());
        let wrong_len = ProgStep {
            g: array![0.0],
            eps: 0.1,
            alpha: 1.0,
        };
        assert!(ProgState::new(target, vec![wrong_len], model).is_err());
    }
}
