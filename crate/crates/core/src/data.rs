//! Synthetic dataset generation, federated partitioners, and matrix file I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{frob_norm_sq, Matrix, Rng, StreamTag};
use crate::model::DataShard;

/// Linear-model synthetic dataset: `X = W_true H_true + E` with one-hot
/// assignment columns and noise scaled to an exact signal-to-noise ratio.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// `10 log10(‖WH‖² / ‖E‖²)`; `f64::INFINITY` means noiseless.
    pub snr_db: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n.min(self.m) {
            return Err(Error::InvalidArgument(format!(
                "cluster count {} out of range for {}x{} data",
                self.k, self.m, self.n
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidArgument("snr_db must not be NaN".into()));
        }
        Ok(())
    }
}

/// How samples are spread over clients.
#[derive(Debug, Clone)]
pub enum PartitionScheme {
    /// Random permutation cut into near-equal shards.
    UniformIid,
    /// K-means with one cluster per client; highly unbalanced and non-i.i.d.
    SimilarityKmeans,
    /// Every client holds samples from exactly two classes, shard sizes
    /// following a power law with the given exponent.
    TwoClassPowerLaw { exponent: f64 },
    /// Every client holds samples from exactly two classes, equal sizes.
    TwoClassBalanced,
}

#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub clients: usize,
}

/// Generates `(X, true labels, W_true)` from the linear model.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Matrix, Vec<usize>, Matrix)> {
    spec.validate()?;
    let mut rng = Rng::for_stream(spec.seed, StreamTag::DatasetNoise);
    let w_true = Matrix::from_fn(spec.m, spec.k, |_, _| rng.unit());
    let labels: Vec<usize> = (0..spec.n).map(|_| rng.index(spec.k)).collect();
    let mut x = Matrix::zeros(spec.m, spec.n);
    for (j, &label) in labels.iter().enumerate() {
        x.col_mut(j).copy_from_slice(w_true.col(label));
    }
    if spec.snr_db.is_finite() {
        let signal = frob_norm_sq(&x);
        let noise_raw = Matrix::from_fn(spec.m, spec.n, |_, _| rng.standard_normal());
        let raw_energy = frob_norm_sq(&noise_raw);
        // ‖E‖² = ‖WH‖² · 10^(−snr/10), enforced by a deterministic rescale.
        let target = signal * 10f64.powf(-spec.snr_db / 10.0);
        let scale = (target / raw_energy).sqrt();
        if !scale.is_finite() {
            return Err(Error::InvalidArgument(
                "degenerate noise draw; cannot scale to the requested ratio".into(),
            ));
        }
        x.add_scaled(scale, &noise_raw);
    }
    Ok((x, labels, w_true))
}

fn shard_from_columns(
    x: &Matrix,
    labels: Option<&[usize]>,
    cols: &[usize],
    total: usize,
) -> Result<DataShard> {
    let mut block = Matrix::zeros(x.rows(), cols.len());
    for (to, &from) in cols.iter().enumerate() {
        block.col_mut(to).copy_from_slice(x.col(from));
    }
    let shard_labels = labels.map(|ls| cols.iter().map(|&j| ls[j]).collect());
    DataShard::new(block, cols.len() as f64 / total as f64, shard_labels)
}

fn near_equal_sizes(n: usize, p: usize) -> Vec<usize> {
    let base = n / p;
    let extra = n % p;
    (0..p).map(|r| base + usize::from(r < extra)).collect()
}

/// Power-law shard sizes `∝ (r+1)^(−α)`, floored at 2 samples, capped at
/// `cap`, and adjusted by largest remainder so they sum to `n` exactly.
fn power_law_sizes(n: usize, p: usize, alpha: f64, cap: usize) -> Result<Vec<usize>> {
    let weights: Vec<f64> = (0..p).map(|r| ((r + 1) as f64).powf(-alpha)).collect();
    let total_w: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| n as f64 * w / total_w).collect();
    let mut sizes: Vec<usize> = ideal
        .iter()
        .map(|&v| (v.floor() as usize).clamp(2, cap))
        .collect();
    let assigned: usize = sizes.iter().sum();
    let mut deficit = n as i64 - assigned as i64;
    // Largest-remainder style adjustment under the floor/cap constraints.
    while deficit != 0 {
        let candidate = if deficit > 0 {
            (0..p)
                .filter(|&r| sizes[r] < cap)
                .max_by(|&a, &b| {
                    (ideal[a] - sizes[a] as f64)
                        .partial_cmp(&(ideal[b] - sizes[b] as f64))
                        .unwrap()
                })
        } else {
            (0..p)
                .filter(|&r| sizes[r] > 2)
                .min_by(|&a, &b| {
                    (ideal[a] - sizes[a] as f64)
                        .partial_cmp(&(ideal[b] - sizes[b] as f64))
                        .unwrap()
                })
        };
        let Some(r) = candidate else {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {n} samples into {p} shards within [2, {cap}]"
            )));
        };
        if deficit > 0 {
            sizes[r] += 1;
            deficit -= 1;
        } else {
            sizes[r] -= 1;
            deficit += 1;
        }
    }
    Ok(sizes)
}

/// Two-classes-per-client partition: samples sorted class-major (shuffled
/// within each class), then cut into contiguous segments. Capping every
/// segment at `min_class_size + 1` guarantees no segment can span three
/// classes.
fn two_class_partition(
    x: &Matrix,
    labels: &[usize],
    p: usize,
    sizes_for: impl FnOnce(usize, usize) -> Result<Vec<usize>>,
    rng: &mut Rng,
) -> Result<Vec<DataShard>> {
    let n = x.cols();
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (j, &l) in labels.iter().enumerate() {
        by_class[l].push(j);
    }
    let min_class = by_class.iter().map(Vec::len).min().unwrap_or(0);
    if min_class == 0 {
        return Err(Error::InvalidArgument(
            "every class must have at least one sample".into(),
        ));
    }
    let cap = min_class + 1;
    let sizes = sizes_for(n, cap)?;
    let mut stream = Vec::with_capacity(n);
    for class in &mut by_class {
        rng.shuffle(class);
        stream.extend_from_slice(class);
    }
    let mut shards = Vec::with_capacity(p);
    let mut at = 0usize;
    for &len in &sizes {
        let cols = &stream[at..at + len];
        at += len;
        let shard = shard_from_columns(x, Some(labels), cols, n)?;
        let mut classes: Vec<usize> = shard.labels().unwrap().to_vec();
        classes.sort_unstable();
        classes.dedup();
        debug_assert!(classes.len() <= 2, "segment spans {} classes", classes.len());
        shards.push(shard);
    }
    Ok(shards)
}

/// Splits the columns of `x` over clients according to `spec`.
pub fn partition(
    x: &Matrix,
    labels: Option<&[usize]>,
    spec: &PartitionSpec,
    rng: &mut Rng,
) -> Result<Vec<DataShard>> {
    let n = x.cols();
    let p = spec.clients;
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "client count {p} out of range for {n} samples"
        )));
    }
    if let Some(ls) = labels {
        if ls.len() != n {
            return Err(Error::DimMismatch(format!(
                "{} labels for {n} samples",
                ls.len()
            )));
        }
    }
    match &spec.scheme {
        PartitionScheme::UniformIid => {
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let sizes = near_equal_sizes(n, p);
            let mut shards = Vec::with_capacity(p);
            let mut at = 0;
            for &len in &sizes {
                shards.push(shard_from_columns(x, labels, &perm[at..at + len], n)?);
                at += len;
            }
            Ok(shards)
        }
        PartitionScheme::SimilarityKmeans => {
            let clustering = crate::algorithms::run_kmeanspp(x, p, rng, 100)?;
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); p];
            for (j, &c) in clustering.labels.iter().enumerate() {
                groups[c].push(j);
            }
            // Re-seed empty clusters by stealing the column farthest from
            // the largest group's mean.
            loop {
                let Some(empty) = groups.iter().position(Vec::is_empty) else {
                    break;
                };
                let largest = (0..p)
                    .max_by_key(|&g| groups[g].len())
                    .expect("at least one group");
                let cols = &groups[largest];
                let mut mean = vec![0.0; x.rows()];
                for &j in cols {
                    for (a, &v) in mean.iter_mut().zip(x.col(j).iter()) {
                        *a += v;
                    }
                }
                for a in &mut mean {
                    *a /= cols.len() as f64;
                }
                let (far_pos, _) = cols
                    .iter()
                    .enumerate()
                    .map(|(pos, &j)| {
                        let d: f64 = x
                            .col(j)
                            .iter()
                            .zip(mean.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (pos, d)
                    })
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                let moved = groups[largest].remove(far_pos);
                groups[empty].push(moved);
            }
            groups
                .iter()
                .map(|cols| shard_from_columns(x, labels, cols, n))
                .collect()
        }
        PartitionScheme::TwoClassPowerLaw { exponent } => {
            let ls = labels.ok_or_else(|| {
                Error::InvalidArgument("two-class partition needs ground-truth labels".into())
            })?;
            let alpha = *exponent;
            two_class_partition(x, ls, p, |n, cap| power_law_sizes(n, p, alpha, cap), rng)
        }
        PartitionScheme::TwoClassBalanced => {
            let ls = labels.ok_or_else(|| {
                Error::InvalidArgument("two-class partition needs ground-truth labels".into())
            })?;
            two_class_partition(
                x,
                ls,
                p,
                |n, cap| {
                    let sizes = near_equal_sizes(n, p);
                    if sizes.iter().any(|&s| s < 2 || s > cap) {
                        return Err(Error::InvalidArgument(format!(
                            "balanced two-class shards of size {} violate [2, {cap}]",
                            sizes[0]
                        )));
                    }
                    Ok(sizes)
                },
                rng,
            )
        }
    }
}

const MAGIC: &[u8; 4] = b"FMC1";

/// Writes `(X, labels)` in the binary container: magic `FMC1`, `u32` M,
/// `u32` N, `u8` has_labels, column-major `f64` payload, then `u32` labels,
/// all little-endian.
pub fn save_matrix(path: &Path, x: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    if let Some(ls) = labels {
        if ls.len() != x.cols() {
            return Err(Error::DimMismatch(format!(
                "{} labels for {} samples",
                ls.len(),
                x.cols()
            )));
        }
    }
    let m = u32::try_from(x.rows())
        .map_err(|_| Error::FormatDimOverflow(format!("{} rows", x.rows())))?;
    let n = u32::try_from(x.cols())
        .map_err(|_| Error::FormatDimOverflow(format!("{} cols", x.cols())))?;
    let mut buf = Vec::with_capacity(13 + 8 * x.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.push(u8::from(labels.is_some()));
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(ls) = labels {
        for &l in ls {
            let l = u32::try_from(l)
                .map_err(|_| Error::FormatDimOverflow(format!("label {l}")))?;
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn parse_binary(bytes: &[u8]) -> Result<(Matrix, Option<Vec<usize>>)> {
    if bytes.len() < 13 {
        return Err(Error::FormatTruncated {
            expected: 13,
            got: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::FormatBadHeader(format!(
            "magic {:02x?} is not {MAGIC:02x?}",
            &bytes[0..4]
        )));
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let has_labels = match bytes[12] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::FormatBadHeader(format!(
                "label flag must be 0 or 1, got {other}"
            )))
        }
    };
    let entries = m
        .checked_mul(n)
        .ok_or_else(|| Error::FormatDimOverflow(format!("{m} x {n}")))?;
    let payload_bytes = entries
        .checked_mul(8)
        .and_then(|b| b.checked_add(13))
        .and_then(|b| b.checked_add(if has_labels { 4 * n } else { 0 }))
        .ok_or_else(|| Error::FormatDimOverflow(format!("{m} x {n} payload")))?;
    if bytes.len() < payload_bytes {
        return Err(Error::FormatTruncated {
            expected: payload_bytes,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(entries);
    for chunk in bytes[13..13 + 8 * entries].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let x = Matrix::from_col_major(m, n, data)?;
    let labels = if has_labels {
        let at = 13 + 8 * entries;
        let mut ls = Vec::with_capacity(n);
        for chunk in bytes[at..at + 4 * n].chunks_exact(4) {
            ls.push(u32::from_le_bytes(chunk.try_into().unwrap()) as usize);
        }
        Some(ls)
    } else {
        None
    };
    Ok((x, labels))
}

/// CSV container: header line `M,N,has_labels`, then M lines of N values
/// (row-major), then one line of N labels when present. Values are printed
/// with Rust's shortest round-trip float formatting, so the round trip is
/// lossless.
pub fn save_matrix_csv(path: &Path, x: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    if let Some(ls) = labels {
        if ls.len() != x.cols() {
            return Err(Error::DimMismatch(format!(
                "{} labels for {} samples",
                ls.len(),
                x.cols()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{},{},{}\n",
        x.rows(),
        x.cols(),
        u8::from(labels.is_some())
    ));
    for i in 0..x.rows() {
        let row: Vec<String> = (0..x.cols()).map(|j| format!("{}", x.get(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if let Some(ls) = labels {
        let row: Vec<String> = ls.iter().map(|l| l.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_csv(text: &str) -> Result<(Matrix, Option<Vec<usize>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::FormatBadHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 3 {
        return Err(Error::FormatBadHeader(format!(
            "expected 'M,N,has_labels', got {header:?}"
        )));
    }
    let m: usize = fields[0]
        .trim()
        .parse()
        .map_err(|_| Error::FormatBadHeader(format!("bad row count {:?}", fields[0])))?;
    let n: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| Error::FormatBadHeader(format!("bad column count {:?}", fields[1])))?;
    let has_labels = match fields[2].trim() {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::FormatBadHeader(format!(
                "label flag must be 0 or 1, got {other:?}"
            )))
        }
    };
    m.checked_mul(n)
        .ok_or_else(|| Error::FormatDimOverflow(format!("{m} x {n}")))?;
    let mut x = Matrix::zeros(m, n);
    for i in 0..m {
        let line = lines.next().ok_or(Error::FormatTruncated {
            expected: m,
            got: i,
        })?;
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != n {
            return Err(Error::FormatMalformedValue(format!(
                "row {i} has {} values, expected {n}",
                values.len()
            )));
        }
        for (j, v) in values.iter().enumerate() {
            let parsed: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::FormatMalformedValue(format!("row {i}: {v:?}")))?;
            x.set(i, j, parsed);
        }
    }
    let labels = if has_labels {
        let line = lines.next().ok_or(Error::FormatTruncated {
            expected: m + 1,
            got: m,
        })?;
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != n {
            return Err(Error::FormatMalformedValue(format!(
                "label row has {} values, expected {n}",
                values.len()
            )));
        }
        let mut ls = Vec::with_capacity(n);
        for v in values {
            ls.push(v.trim().parse::<usize>().map_err(|_| {
                Error::FormatMalformedValue(format!("label {v:?}"))
            })?);
        }
        Some(ls)
    } else {
        None
    };
    Ok((x, labels))
}

/// Loads either container, sniffing the binary magic first.
pub fn load_matrix(path: &Path) -> Result<(Matrix, Option<Vec<usize>>)> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && &bytes[0..4] == MAGIC {
        return parse_binary(&bytes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::FormatBadHeader("neither binary magic nor UTF-8 text".into()))?;
    parse_csv(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_dist_sq;

    #[test]
    fn snr_identity_holds_exactly() {
        let spec = SyntheticSpec {
            m: 20,
            n: 100,
            k: 4,
            snr_db: -3.0,
            seed: 7,
        };
        let (x, labels, w_true) = gen_synthetic(&spec).unwrap();
        let mut signal = Matrix::zeros(20, 100);
        for (j, &l) in labels.iter().enumerate() {
            signal.col_mut(j).copy_from_slice(w_true.col(l));
        }
        let noise_energy = frob_dist_sq(&x, &signal);
        let ratio = noise_energy / frob_norm_sq(&signal);
        let want = 10f64.powf(0.3);
        assert!(
            (ratio - want).abs() < 1e-10 * want,
            "noise/signal {ratio} vs {want}"
        );
    }

    #[test]
    fn noiseless_sentinel_gives_exact_factorization() {
        let spec = SyntheticSpec {
            m: 6,
            n: 30,
            k: 3,
            snr_db: f64::INFINITY,
            seed: 1,
        };
        let (x, labels, w_true) = gen_synthetic(&spec).unwrap();
        for (j, &l) in labels.iter().enumerate() {
            assert_eq!(x.col(j), w_true.col(l));
        }
    }

    #[test]
    fn labels_are_roughly_uniform() {
        let spec = SyntheticSpec {
            m: 8,
            n: 5000,
            k: 5,
            snr_db: f64::INFINITY,
            seed: 3,
        };
        let (_, labels, _) = gen_synthetic(&spec).unwrap();
        let mut counts = [0usize; 5];
        for &l in &labels {
            counts[l] += 1;
        }
        let expect = 1000.0;
        let sigma = (5000.0 * 0.2 * 0.8f64).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_noise() {
        let mk = |seed| {
            gen_synthetic(&SyntheticSpec {
                m: 5,
                n: 20,
                k: 2,
                snr_db: 0.0,
                seed,
            })
            .unwrap()
            .0
        };
        let a = mk(1);
        let b = mk(2);
        assert!(frob_dist_sq(&a, &b) > 1e-12);
        let a2 = mk(1);
        assert_eq!(frob_dist_sq(&a, &a2), 0.0);
    }

    fn column_multiset(x: &Matrix) -> Vec<Vec<u64>> {
        let mut cols: Vec<Vec<u64>> = (0..x.cols())
            .map(|j| x.col(j).iter().map(|v| v.to_bits()).collect())
            .collect();
        cols.sort();
        cols
    }

    #[test]
    fn uniform_partition_is_exact_and_balanced() {
        let spec = SyntheticSpec {
            m: 6,
            n: 1000,
            k: 4,
            snr_db: 0.0,
            seed: 11,
        };
        let (x, labels, _) = gen_synthetic(&spec).unwrap();
        let mut rng = Rng::for_stream(11, StreamTag::Partition);
        let shards = partition(
            &x,
            Some(&labels),
            &PartitionSpec {
                scheme: PartitionScheme::UniformIid,
                clients: 10,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.n_samples() == 100));
        let total: usize = shards.iter().map(|s| s.n_samples()).sum();
        assert_eq!(total, 1000);
        // Multiset of columns is preserved.
        let xs: Vec<&Matrix> = shards.iter().map(|s| s.x()).collect();
        let stacked = Matrix::hstack(&xs).unwrap();
        assert_eq!(column_multiset(&stacked), column_multiset(&x));
    }

    #[test]
    fn two_class_partitions_have_at_most_two_classes() {
        let spec = SyntheticSpec {
            m: 6,
            n: 600,
            k: 5,
            snr_db: 5.0,
            seed: 13,
        };
        let (x, labels, _) = gen_synthetic(&spec).unwrap();
        for scheme in [
            PartitionScheme::TwoClassBalanced,
            PartitionScheme::TwoClassPowerLaw { exponent: 1.0 },
        ] {
            let mut rng = Rng::for_stream(13, StreamTag::Partition);
            let shards = partition(
                &x,
                Some(&labels),
                &PartitionSpec {
                    scheme: scheme.clone(),
                    clients: 12,
                },
                &mut rng,
            )
            .unwrap();
            let total: usize = shards.iter().map(|s| s.n_samples()).sum();
            assert_eq!(total, 600);
            for s in &shards {
                assert!(s.n_samples() >= 2);
                let mut classes: Vec<usize> = s.labels().unwrap().to_vec();
                classes.sort_unstable();
                classes.dedup();
                assert!(classes.len() <= 2, "{scheme:?}: {} classes", classes.len());
            }
        }
    }

    #[test]
    fn power_law_sizes_decay() {
        let sizes = power_law_sizes(1000, 8, 1.0, 400).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 1000);
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "{sizes:?}");
        assert!(sizes.iter().all(|&s| s >= 2));
    }

    #[test]
    fn similarity_partition_recovers_separated_blobs() {
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut gen = Rng::for_stream(seed, StreamTag::DatasetNoise);
            let n_half = 30;
            let x = Matrix::from_fn(4, 2 * n_half, |_, j| {
                let center = if j < n_half { 0.0 } else { 10.0 };
                center + 0.3 * gen.standard_normal()
            });
            let mut rng = Rng::for_stream(seed, StreamTag::Partition);
            let shards = partition(
                &x,
                None,
                &PartitionSpec {
                    scheme: PartitionScheme::SimilarityKmeans,
                    clients: 2,
                },
                &mut rng,
            )
            .unwrap();
            // Each shard should be exactly one blob: all coordinates on one side.
            let pure = shards.iter().all(|s| {
                let first_side = s.x().get(0, 0) > 5.0;
                (0..s.n_samples()).all(|j| (s.x().get(0, j) > 5.0) == first_side)
            });
            let balanced = shards.iter().all(|s| s.n_samples() == n_half);
            if pure && balanced {
                hits += 1;
            }
        }
        assert!(hits >= 9, "recovered blobs in {hits}/10 seeds");
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.fmc");
        let mut rng = Rng::from_seed(5);
        let x = Matrix::from_fn(7, 5, |_, _| rng.uniform(-10.0, 10.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.index(3)).collect();
        save_matrix(&path, &x, Some(&labels)).unwrap();
        let (x2, l2) = load_matrix(&path).unwrap();
        assert_eq!(x.data(), x2.data());
        assert_eq!(l2.as_deref(), Some(labels.as_slice()));
    }

    #[test]
    fn csv_parses_equivalently_to_binary() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("data.fmc");
        let csv = dir.path().join("data.csv");
        let mut rng = Rng::from_seed(6);
        let x = Matrix::from_fn(4, 6, |_, _| rng.uniform(-1.0, 1.0));
        let labels: Vec<usize> = (0..6).map(|_| rng.index(2)).collect();
        save_matrix(&bin, &x, Some(&labels)).unwrap();
        save_matrix_csv(&csv, &x, Some(&labels)).unwrap();
        let (xb, lb) = load_matrix(&bin).unwrap();
        let (xc, lc) = load_matrix(&csv).unwrap();
        assert_eq!(xb.data(), xc.data());
        assert_eq!(lb, lc);
    }

    #[test]
    fn loader_reports_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmc");

        fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
        // Not the magic and not valid CSV either.
        assert!(matches!(
            load_matrix(&path),
            Err(Error::FormatBadHeader(_))
        ));

        let mut good = Vec::new();
        good.extend_from_slice(b"FMC1");
        good.extend_from_slice(&2u32.to_le_bytes());
        good.extend_from_slice(&2u32.to_le_bytes());
        good.push(0);
        good.extend_from_slice(&1.0f64.to_le_bytes());
        fs::write(&path, &good).unwrap();
        assert!(matches!(
            load_matrix(&path),
            Err(Error::FormatTruncated { .. })
        ));

        let mut overflow = Vec::new();
        overflow.extend_from_slice(b"FMC1");
        overflow.extend_from_slice(&u32::MAX.to_le_bytes());
        overflow.extend_from_slice(&u32::MAX.to_le_bytes());
        overflow.push(0);
        fs::write(&path, &overflow).unwrap();
        let err = load_matrix(&path).unwrap_err();
        assert!(
            matches!(err, Error::FormatDimOverflow(_) | Error::FormatTruncated { .. }),
            "got {err:?}"
        );
    }
}
