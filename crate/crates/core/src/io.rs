//! Point-cloud files.
//!
//! CSV: one point per row, comma separated, optionally with the weight in the
//! last column. A non-numeric first row is treated as a header.
//!
//! `PCLD`: magic `PCLD`, version `u32`, `n: u64`, `d: u64`, a `u8` weights
//! flag, then `n` rows of `d` little-endian `f64` coordinates, each followed by
//! its weight when the flag is set.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::binio::{read_array, read_f64, read_len};
use crate::geometry::{PointCloud, WEIGHT_SUM_TOL};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PCLD";
const VERSION: u32 = 1;

/// Weights whose sum is within this distance of 1 are renormalized.
pub const WEIGHT_RENORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `weighted`: the last column holds the point weights.
    Csv {
        weighted: bool,
    },
    Bin,
}

impl CloudFormat {
    /// `.bin`/`.pcld` files are binary, anything else CSV.
    pub fn from_path(path: &Path, weighted: bool) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("pcld") => CloudFormat::Bin,
            _ => CloudFormat::Csv { weighted },
        }
    }
}

/// Validate raw weights: exact sums pass unchanged, near-misses are
/// renormalized, anything else is rejected.
pub fn normalize_weights(w: Array1<f64>) -> Result<Array1<f64>> {
    if !w.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::InvalidCloud("weights must be positive and finite".into()));
    }
    let total = w.sum();
    let dev = (total - 1.0).abs();
    if dev <= WEIGHT_SUM_TOL {
        Ok(w)
    } else if dev <= WEIGHT_RENORM_TOL {
        Ok(w / total)
    } else {
        Err(Error::InvalidCloud(format!(
            "weights sum to {total}, more than {WEIGHT_RENORM_TOL:e} away from 1"
        )))
    }
}

fn assemble(n: usize, cols: usize, data: Vec<f64>, weighted: bool) -> Result<PointCloud> {
    if n == 0 || cols == 0 || (weighted && cols < 2) {
        return Err(Error::InvalidCloud("no points".into()));
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidCloud("non-finite value".into()));
    }
    let table = Array2::from_shape_vec((n, cols), data).map_err(|e| Error::Format(e.to_string()))?;
    if weighted {
        let d = cols - 1;
        let pts = table.slice(ndarray::s![.., ..d]).to_owned();
        let w = normalize_weights(table.column(d).to_owned())?;
        PointCloud::new(pts, w)
    } else {
        PointCloud::uniform(table)
    }
}

pub fn read_csv<R: Read>(r: R, weighted: bool) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r);
    let mut data = Vec::new();
    let mut cols = None;
    let mut n = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(f64::from_str).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Format(format!("row {}: {e}", line + 1))),
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {c}",
                    line + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        n += 1;
    }
    assemble(n, cols.unwrap_or(0), data, weighted)
}

/// Writes coordinates with 17 significant digits so values round-trip.
pub fn write_csv<W: Write>(w: W, cloud: &PointCloud, weighted: bool) -> Result<()> {
    let mut out = BufWriter::new(w);
    for i in 0..cloud.len() {
        let mut fields: Vec<String> = cloud.point(i).iter().map(|v| format!("{v:.16e}")).collect();
        if weighted {
            fields.push(format!("{:.16e}", cloud.weights()[i]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pcld<R: Read>(mut r: R) -> Result<PointCloud> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a PCLD file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PCLD version {version}")));
    }
    let n = read_len(&mut r)?;
    let d = read_len(&mut r)?;
    let [flag] = read_array::<_, 1>(&mut r)?;
    let weighted = match flag {
        0 => false,
        1 => true,
        f => return Err(Error::Format(format!("invalid weights flag {f}"))),
    };
    let cols = d + weighted as usize;
    let total = n
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let mut data = Vec::with_capacity(total.min(1 << 24));
    for _ in 0..total {
        data.push(read_f64(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after PCLD payload".into()));
    }
    if d == 0 {
        return Err(Error::InvalidCloud("zero-dimensional points".into()));
    }
    assemble(n, cols, data, weighted)
}

pub fn write_pcld<W: Write>(w: W, cloud: &PointCloud, weighted: bool) -> Result<()> {
    let mut out = BufWriter::new(w);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(cloud.len() as u64).to_le_bytes())?;
    out.write_all(&(cloud.dim() as u64).to_le_bytes())?;
    out.write_all(&[weighted as u8])?;
    for i in 0..cloud.len() {
        for v in cloud.point(i) {
            out.write_all(&v.to_le_bytes())?;
        }
        if weighted {
            out.write_all(&cloud.weights()[i].to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_point_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let file = BufReader::new(File::open(path)?);
    match format {
        CloudFormat::Csv { weighted } => read_csv(file, weighted),
        CloudFormat::Bin => read_pcld(file),
    }
}

/// Binary files always carry weights so the round trip is exact.
pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let file = File::create(path)?;
    match format {
        CloudFormat::Csv { weighted } => write_csv(file, cloud, weighted),
        CloudFormat::Bin => write_pcld(file, cloud, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn csv_uniform() {
        let c = read_csv("0,0\n1,1\n".as_bytes(), false).unwrap();
        assert_eq!(c.points(), &array![[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(c.weights(), &array![0.5, 0.5]);
    }

    #[test]
    fn csv_header_and_weights() {
        let c = read_csv("x,y,weight\n0, 1, 0.25\n2,3,0.75\n".as_bytes(), true).unwrap();
        assert_eq!(c.points(), &array![[0.0, 1.0], [2.0, 3.0]]);
        assert_eq!(c.weights(), &array![0.25, 0.75]);
    }

    #[test]
    fn csv_weight_tolerance() {
        let c = read_csv("0,0.3\n1,0.69999\n".as_bytes(), true).unwrap();
        assert!((c.weights().sum() - 1.0).abs() < 1e-15);
        assert!((c.weights()[0] - 0.3 / 0.99999).abs() < 1e-15);
        assert!(matches!(
            read_csv("0,0.3\n1,0.6\n".as_bytes(), true),
            Err(Error::InvalidCloud(_))
        ));
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(read_csv("".as_bytes(), false).is_err());
        assert!(read_csv("0,1\n2\n".as_bytes(), false).is_err());
        assert!(read_csv("0,1\n2,abc\n".as_bytes(), false).is_err());
        assert!(read_csv("0,NaN\n".as_bytes(), false).is_err());
        assert!(read_csv("0,inf\n".as_bytes(), false).is_err());
        assert!(read_csv("0,-0.5\n1,1.5\n".as_bytes(), true).is_err());
    }

    #[test]
    fn pcld_round_trip_is_bit_exact() {
        let c = PointCloud::new(array![[0.1, -2.0 / 3.0], [1e300, 5e-324]], array![0.3, 0.7]).unwrap();
        for weighted in [true, false] {
            let mut buf = Vec::new();
            write_pcld(&mut buf, &c, weighted).unwrap();
            let back = read_pcld(buf.as_slice()).unwrap();
            assert_eq!(back.points(), c.points());
            if weighted {
                assert_eq!(back, c);
            } else {
                assert_eq!(back.weights(), &array![0.5, 0.5]);
            }
            let mut again = Vec::new();
            write_pcld(&mut again, &back, weighted).unwrap();
            if weighted {
                assert_eq!(buf, again);
            }
        }
    }

    #[test]
    fn pcld_rejects_corruption() {
        let c = PointCloud::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let mut buf = Vec::new();
        write_pcld(&mut buf, &c, true).unwrap();
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(read_pcld(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_pcld(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut flag = buf.clone();
        flag[24] = 7;
        assert!(matches!(read_pcld(flag.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn files_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
                            raw in prop::collection::vec(0.1f64..1.0, 20)) {
            let n = rows.len();
            let w = Array1::from(raw[..n].to_vec());
            let w = &w / w.sum();
            let pts = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
            let c = PointCloud::new(pts, w).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let bin = dir.path().join("c.pcld");
            write_point_cloud(&bin, &c, CloudFormat::Bin).unwrap();
            prop_assert_eq!(&read_point_cloud(&bin, CloudFormat::from_path(&bin, false)).unwrap(), &c);
            let csv_path = dir.path().join("c.csv");
            write_point_cloud(&csv_path, &c, CloudFormat::Csv { weighted: false }).unwrap();
            let back = read_point_cloud(&csv_path, CloudFormat::Csv { weighted: false }).unwrap();
            prop_assert_eq!(back.points(), c.points());
        }
    }
}
