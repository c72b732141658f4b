//! Latent-space inspection: PCA projection to two dimensions, a scalar
//! cluster-separation statistic, and CSV export.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum LatentMapError {
    #[error("need at least 3 vectors, got {0}")]
    TooFewPoints(usize),
    #[error("vectors have inconsistent dimensions ({0} vs {1})")]
    Ragged(usize, usize),
    #[error("{0}")]
    Labels(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Returned by [`separation_ratio`] when every label collapses to a point.
pub const SEPARATION_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub id: usize,
    pub label: usize,
    pub vector: Vec<f64>,
    pub projection: Option<[f64; 2]>,
}

fn check_dims(vectors: &[Vec<f64>]) -> Result<usize, LatentMapError> {
    let d = vectors.first().map_or(0, Vec::len);
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(LatentMapError::Ragged(d, v.len()));
    }
    Ok(d)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Top eigenvector of the symmetric matrix `m` (`d x d`) by power
/// iteration from a fixed start; sign chosen so the largest-magnitude
/// component is positive.
fn power_iteration(m: &[f64], d: usize) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            w[i] = (0..d).map(|j| m[i * d + j] * v[j]).sum();
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-300 {
            return (0.0, v);
        }
        w.iter_mut().for_each(|x| *x /= n);
        let delta = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = n;
        if delta < 1e-9 {
            break;
        }
    }
    let big = v.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (lambda, v)
}

/// Centres the vectors and projects them on the two leading principal
/// directions (by descending variance).
pub fn project_pca(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>, LatentMapError> {
    let n = vectors.len();
    if n < 3 {
        return Err(LatentMapError::TooFewPoints(n));
    }
    let d = check_dims(vectors)?;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for v in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += v[i] * v[j] / n as f64;
            }
        }
    }
    let mut axes = Vec::with_capacity(2);
    for _ in 0..2.min(d) {
        let (lambda, e) = power_iteration(&cov, d);
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * e[i] * e[j];
            }
        }
        axes.push(if lambda > 0.0 { e } else { vec![0.0; d] });
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok(centred
        .iter()
        .map(|v| {
            let p = |a: &[f64]| a.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}

/// Mean distance between centroids of distinct labels over the mean
/// distance of points to their own label's centroid.
pub fn separation_ratio(vectors: &[Vec<f64>], labels: &[usize]) -> Result<f64, LatentMapError> {
    if vectors.len() != labels.len() {
        return Err(LatentMapError::Labels(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    let d = check_dims(vectors)?;
    let mut groups: std::collections::BTreeMap<usize, Vec<&[f64]>> = Default::default();
    for (v, &l) in vectors.iter().zip(labels) {
        groups.entry(l).or_default().push(v);
    }
    if groups.len() < 2 {
        return Err(LatentMapError::Labels(format!("need 2 labels, found {}", groups.len())));
    }
    if let Some((l, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(LatentMapError::Labels(format!("label {l} has {} point(s)", g.len())));
    }
    let centroids: Vec<Vec<f64>> = groups
        .values()
        .map(|g| {
            let mut c = vec![0.0; d];
            for v in g {
                for (ci, x) in c.iter_mut().zip(v.iter()) {
                    *ci += x;
                }
            }
            c.iter_mut().for_each(|x| *x /= g.len() as f64);
            c
        })
        .collect();
    let mut between = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            between += dist(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    between /= pairs as f64;
    let within = groups
        .values()
        .zip(&centroids)
        .flat_map(|(g, c)| g.iter().map(move |v| dist(v, c)))
        .sum::<f64>()
        / vectors.len() as f64;
    if within == 0.0 {
        return Ok(if between == 0.0 { 0.0 } else { SEPARATION_CAP });
    }
    Ok((between / within).min(SEPARATION_CAP))
}

/// `id,label,x,y,z0,...` sorted by id; values use shortest round-trip
/// formatting.
pub fn to_csv(records: &[LatentRecord]) -> String {
    let mut sorted: Vec<&LatentRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let dims = sorted.first().map_or(0, |r| r.vector.len());
    let mut out = String::from("id,label,x,y");
    for i in 0..dims {
        write!(out, ",z{i}").unwrap();
    }
    out.push('\n');
    for r in sorted {
        let [x, y] = r.projection.unwrap_or([f64::NAN, f64::NAN]);
        write!(out, "{},{},{x:?},{y:?}", r.id, r.label).unwrap();
        for v in &r.vector {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn export_csv(records: &[LatentRecord], path: &Path) -> Result<(), LatentMapError> {
    std::fs::write(path, to_csv(records)).map_err(|source| LatentMapError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Attaches PCA coordinates to records.
pub fn project_records(records: &mut [LatentRecord]) -> Result<(), LatentMapError> {
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    for (r, p) in records.iter_mut().zip(project_pca(&vectors)?) {
        r.projection = Some(p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_points_project_to_origin() {
        let p = project_pca(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        assert!(p.iter().all(|q| q == &[0.0, 0.0]));
        assert!(project_pca(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn planar_data_keeps_distances_and_orders_variance() {
        let pts: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                let (a, b) = ((i as f64 * 0.7).sin() * 3.0, (i as f64 * 1.3).cos());
                vec![a + 0.5 * b, -0.5 * a + b]
            })
            .collect();
        let p = project_pca(&pts).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let dp = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                assert!((dp - dist(&pts[i], &pts[j])).abs() < 1e-6);
            }
        }
        let var = |k: usize| p.iter().map(|q| q[k] * q[k]).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn separation_cases() {
        let v = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(separation_ratio(&v, &[0, 0, 1, 1]).unwrap(), SEPARATION_CAP);
        assert!(separation_ratio(&v, &[0, 0, 0, 0]).is_err());
        assert!(separation_ratio(&v, &[0, 0, 0, 1]).is_err());

        let mut rng = crate::rng::stream(4, "cloud");
        let cloud: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let random: Vec<usize> = (0..300).map(|_| rng.random_range(0..3)).collect();
        let mixed = separation_ratio(&cloud, &random).unwrap();
        let shifted: Vec<Vec<f64>> = cloud
            .iter()
            .zip(&random)
            .map(|(v, &l)| v.iter().map(|x| x + 4.0 * l as f64).collect())
            .collect();
        let apart = separation_ratio(&shifted, &random).unwrap();
        assert!(mixed < 0.5 && apart > 2.0 * mixed, "{mixed} {apart}");
    }

    #[test]
    fn csv_round_trips() {
        let recs: Vec<LatentRecord> = (0..3)
            .rev()
            .map(|id| LatentRecord {
                id,
                label: id % 2,
                vector: vec![0.1 * id as f64, 1.0 / 3.0],
                projection: Some([id as f64, -1e-17]),
            })
            .collect();
        let csv = to_csv(&recs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "id,label,x,y,z0,z1");
        assert_eq!(csv.matches("id,label").count(), 1);
        for (k, line) in lines[1..].iter().enumerate() {
            let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            let r = recs.iter().find(|r| r.id == k).unwrap();
            assert_eq!(f[2..4], r.projection.unwrap());
            assert_eq!(f[4..], r.vector[..]);
        }
    }

    fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), 0usize..2), 6..20).prop_filter_map(
            "two labels with two points",
            |pts| {
                let labels: Vec<usize> = pts.iter().map(|p| p.1).collect();
                let ones = labels.iter().filter(|&&l| l == 1).count();
                (ones >= 2 && labels.len() - ones >= 2).then(|| (pts.into_iter().map(|p| p.0).collect(), labels))
            },
        )
    }

    proptest! {
        #[test]
        fn separation_is_scale_and_order_invariant((v, l) in cloud(), c in 0.1f64..10.0) {
            let base = separation_ratio(&v, &l).unwrap();
            let scaled: Vec<Vec<f64>> = v.iter().map(|x| x.iter().map(|y| y * c).collect()).collect();
            prop_assert!((separation_ratio(&scaled, &l).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
            let (mut rv, mut rl) = (v.clone(), l.clone());
            rv.reverse();
            rl.reverse();
            prop_assert!((separation_ratio(&rv, &rl).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn projection_is_translation_invariant((v, _) in cloud(), t in prop::collection::vec(-3.0f64..3.0, 3)) {
            let a = project_pca(&v).unwrap();
            let moved: Vec<Vec<f64>> = v.iter().map(|x| x.iter().zip(&t).map(|(p, q)| p + q).collect()).collect();
            let b = project_pca(&moved).unwrap();
            for (p, q) in a.iter().zip(&b) {
                for k in 0..2 {
                    prop_assert!((p[k].abs() - q[k].abs()).abs() < 1e-5);
                }
            }
        }
    }
}
