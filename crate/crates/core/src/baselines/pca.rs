use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{symmetric_eigen, Matrix};
use crate::persist::{read_file, Reader, Writer};

const MAGIC: &[u8; 4] = b"PCAM";
const FORMAT_VERSION: u32 = 1;

/// Principal components of the rows of a fixed-width data matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D_x × D_z`, orthonormal columns.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    /// Set when `D_z` exceeds the numerical rank of the covariance; the
    /// trailing directions then span an arbitrary part of its null space.
    pub rank_deficient: bool,
}

pub fn pca_fit(x: &Matrix, d_z: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n == 0 || d_z == 0 || d_z > d {
        return Err(Error::Config(format!("PCA with {d_z} components on {n} rows of width {d}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
    let centred = Matrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose().matmul(&centred)?.scale(1.0 / n as f64);
    let eig = symmetric_eigen(&cov)?;
    let top = eig.values[0].max(0.0);
    let rank_deficient = eig.values[d_z - 1] <= 1e-12 * top.max(f64::MIN_POSITIVE);
    let components = Matrix::from_fn(d, d_z, |i, k| eig.vectors[(i, k)]);
    let explained_variance = eig.values[..d_z].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        rank_deficient,
    })
}

impl PcaModel {
    pub fn d_x(&self) -> usize {
        self.mean.len()
    }

    pub fn d_z(&self) -> usize {
        self.components.cols()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d_x() {
            return Err(Error::Shape(format!("PCA of width {} given rows of {}", self.d_x(), x.cols())));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let centred = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - self.mean[j]);
        centred.matmul(&self.components)
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.matmul(&self.components.transpose())?;
        for i in 0..out.rows() {
            for (o, m) in out.row_mut(i).iter_mut().zip(&self.mean) {
                *o += m;
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decode(&self.encode(x)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::with_header(MAGIC, FORMAT_VERSION);
        w.f64s(&self.mean);
        w.matrix(&self.components);
        w.f64s(&self.explained_variance);
        w.bool(self.rank_deficient);
        w.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (mut r, version) = Reader::open(&bytes, MAGIC, "PCA model")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported PCA format version {version}")));
        }
        let m = Self {
            mean: r.f64s()?,
            components: r.matrix()?,
            explained_variance: r.f64s()?,
            rank_deficient: r.bool()?,
        };
        r.finish()?;
        if m.components.rows() != m.mean.len() || m.explained_variance.len() != m.components.cols() {
            return Err(Error::Format("inconsistent PCA model dimensions".into()));
        }
        Ok(m)
    }
}
