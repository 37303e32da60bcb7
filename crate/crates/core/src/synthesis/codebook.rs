//! k-means speech-token codebook over mel frames.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::matrix_io::matrix_to_bytes;
use crate::params::{sha256_hex, ByteReader};
use crate::scalar::Scalar;
use crate::speech_decoder::SpeechTokenSequence;
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"RSCB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Matrix<f64>,
    trained_on: String,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `centroids` (squared Euclidean, lowest index wins ties).
fn nearest(centroids: &Matrix<f64>, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Hash identifying the training frames.
pub fn frames_hash(mels: &[Matrix<f64>]) -> String {
    let mut bytes = Vec::new();
    for m in mels {
        bytes.extend(matrix_to_bytes(m));
    }
    sha256_hex(&bytes)
}

/// k-means++ seeding followed by at most `iters` Lloyd iterations.
pub fn fit_codebook(mels: &[Matrix<f64>], v: usize, seed: u64, iters: usize) -> Result<Codebook> {
    if v < 2 {
        return Err(CoreError::validation("vocab", "codebook needs at least 2 entries"));
    }
    let dim = mels.first().map_or(0, Matrix::cols);
    if mels.iter().any(|m| m.cols() != dim) {
        return Err(CoreError::Shape("mel spectrograms differ in bin count".into()));
    }
    let points: Vec<&[f64]> = mels.iter().flat_map(|m| m.iter_rows()).collect();
    if points.len() < v {
        return Err(CoreError::validation(
            "mels",
            format!("{} frames cannot fit {v} centroids", points.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cents = Matrix::zeros(v, dim);
    let first = rng.random_range(0..points.len());
    cents.row_mut(0).copy_from_slice(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, cents.row(0))).collect();
    for k in 1..v {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(CoreError::validation(
                "mels",
                format!("only {k} distinct frames for {v} centroids"),
            ));
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                if u < d {
                    break;
                }
                u -= d;
            }
        }
        let pick = pick.expect("positive mass");
        cents.row_mut(k).copy_from_slice(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, cents.row(k)));
        }
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&cents, p);
            dist[i] = d;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::<f64>::zeros(v, dim);
        let mut counts = vec![0usize; v];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, x) in sums.row_mut(assign[i]).iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for k in 0..v {
            if counts[k] == 0 {
                // Re-seed an empty cluster at the worst-served frame.
                let far = (0..points.len())
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                cents.row_mut(k).copy_from_slice(points[far]);
                dist[far] = 0.0;
            } else {
                let n = counts[k] as f64;
                for (c, s) in cents.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *c = s / n;
                }
            }
        }
    }
    Codebook::new(cents, frames_hash(mels))
}

impl Codebook {
    pub fn new(centroids: Matrix<f64>, trained_on: String) -> Result<Self> {
        if centroids.rows() < 2 {
            return Err(CoreError::validation("centroids", "need at least 2"));
        }
        for i in 0..centroids.rows() {
            for j in 0..i {
                if centroids.row(i) == centroids.row(j) {
                    return Err(CoreError::validation("centroids", format!("{j} and {i} coincide")));
                }
            }
        }
        Ok(Self { centroids, trained_on })
    }

    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix<f64> {
        &self.centroids
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&matrix_to_bytes(&self.centroids))
    }

    pub fn tokenize(&self, mel: &Matrix<f64>) -> Result<SpeechTokenSequence> {
        if mel.cols() != self.dim() {
            return Err(CoreError::Shape(format!("mel width {} != codebook dim {}", mel.cols(), self.dim())));
        }
        Ok(SpeechTokenSequence {
            tokens: mel.iter_rows().map(|r| nearest(&self.centroids, r).0 as u32).collect(),
        })
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<Matrix<f64>> {
        let mut out = Matrix::zeros(tokens.len(), self.dim());
        for (r, &t) in tokens.iter().enumerate() {
            if t as usize >= self.size() {
                return Err(CoreError::TokenRange {
                    id: t as usize,
                    vocab: self.size(),
                });
            }
            out.row_mut(r).copy_from_slice(self.centroids.row(t as usize));
        }
        Ok(out)
    }

    /// Mean squared quantization error per frame.
    pub fn distortion(&self, mel: &Matrix<f64>) -> f64 {
        if mel.rows() == 0 {
            return 0.0;
        }
        mel.iter_rows().map(|r| nearest(&self.centroids, r).1).sum::<f64>() / mel.rows() as f64
    }

    /// `magic | version | V | dim | content hash | trained-on hash | f64-le centroids`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for s in [self.content_hash(), self.trained_on.clone()] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for v in self.centroids.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(CoreError::Checkpoint("bad codebook magic".into()));
        }
        if r.u32()? != VERSION {
            return Err(CoreError::Checkpoint("unsupported codebook version".into()));
        }
        let v = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut text = || -> Result<String> {
            let n = r.u32()? as usize;
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| CoreError::Checkpoint("codebook header is not UTF-8".into()))
        };
        let hash = text()?;
        let trained_on = text()?;
        let data = (0..v * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if !r.done() {
            return Err(CoreError::Checkpoint("trailing bytes in codebook".into()));
        }
        let cb = Self::new(Matrix::from_vec(v, dim, data)?, trained_on)?;
        if cb.content_hash() != hash {
            return Err(CoreError::Checkpoint("codebook content hash mismatch".into()));
        }
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| CoreError::io(path, e))?)
    }
}

/// Averages each run of `ratio` frames (trailing remainder dropped).
pub fn pool_frames(mel: &Matrix<f64>, ratio: usize) -> Matrix<f64> {
    let ratio = ratio.max(1);
    let rows = mel.rows() / ratio;
    Matrix::from_fn(rows, mel.cols(), |r, c| {
        (0..ratio).map(|j| mel.get(r * ratio + j, c)).sum::<f64>() / ratio as f64
    })
}

/// Nearest-neighbour upsampling in time.
pub fn upsample_frames<T: Scalar>(m: &Matrix<T>, ratio: usize) -> Matrix<T> {
    Matrix::from_fn(m.rows() * ratio, m.cols(), |r, c| m.get(r / ratio, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, 3, |r, c| ((r * 3 + c) as f64 * 1.7).sin() * 4.0 + r as f64)
    }

    #[test]
    fn exact_points_become_centroids() {
        let m = points(6);
        let cb = fit_codebook(std::slice::from_ref(&m), 6, 4, 20).unwrap();
        let mut got: Vec<Vec<f64>> = cb.centroids().iter_rows().map(<[f64]>::to_vec).collect();
        let mut want: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        let ids: Vec<u32> = (0..6).collect();
        let back = cb.tokenize(&cb.detokenize(&ids).unwrap()).unwrap();
        assert_eq!(back.tokens, ids);
    }

    #[test]
    fn ties_go_to_lowest_index_and_errors_are_reported() {
        let mut c = Matrix::zeros(10, 2);
        for i in 0..10 {
            c.set(i, 0, i as f64 * 10.0);
        }
        let cb = Codebook::new(c, String::new()).unwrap();
        let mid = Matrix::from_rows(&[vec![60.0, 0.0]]).unwrap();
        assert_eq!(cb.tokenize(&mid).unwrap().tokens, vec![6]);
        let c2 = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![5.0]]).unwrap();
        let cb2 = Codebook::new(c2, String::new()).unwrap();
        assert_eq!(cb2.tokenize(&Matrix::from_rows(&[vec![4.0]]).unwrap()).unwrap().tokens, vec![3]);
        assert!(cb.detokenize(&[10]).is_err());
        assert!(fit_codebook(&[points(3)], 4, 0, 5).is_err());
    }

    #[test]
    fn seeded_and_serialisable() {
        let m = points(40);
        let a = fit_codebook(std::slice::from_ref(&m), 5, 9, 30).unwrap();
        assert_eq!(a, fit_codebook(&[m], 5, 9, 30).unwrap());
        let back = Codebook::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        let mut bytes = a.to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(Codebook::from_bytes(&bytes).is_err());
    }

    #[test]
    fn pooling_and_upsampling() {
        let m = Matrix::from_fn(5, 1, |r, _| r as f64);
        let p = pool_frames(&m, 2);
        assert_eq!(p.as_slice(), &[0.5, 2.5]);
        assert_eq!(upsample_frames(&p, 2).as_slice(), &[0.5, 0.5, 2.5, 2.5]);
    }
}
