use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// The relevance scale, in order.
pub const SCALE: [f64; 3] = [0.0, 0.5, 1.0];

/// Position of `score` on [`SCALE`].
pub fn scale_index(score: f64) -> Option<usize> {
    SCALE.iter().position(|&s| s == score)
}

/// Items × scale-category rating counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    counts: Vec<[u32; 3]>,
}

impl AnnotationMatrix {
    pub fn from_counts(counts: Vec<[u32; 3]>) -> Self {
        AnnotationMatrix { counts }
    }

    /// One entry per item, holding that item's scores.
    pub fn from_ratings(items: &[Vec<f64>]) -> Result<Self, MetricError> {
        let mut counts = Vec::with_capacity(items.len());
        for item in items {
            let mut row = [0u32; 3];
            for &score in item {
                let c = scale_index(score).ok_or(MetricError::OffScale(score))?;
                row[c] += 1;
            }
            counts.push(row);
        }
        Ok(AnnotationMatrix { counts })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self, item: usize) -> u32 {
        self.counts[item].iter().sum()
    }

    pub fn row(&self, item: usize) -> [u32; 3] {
        self.counts[item]
    }
}

/// Fleiss' kappa. Every item must have the same number of raters, at least two.
pub fn fleiss_kappa(matrix: &AnnotationMatrix) -> Result<f64, MetricError> {
    if matrix.items() == 0 {
        return Err(MetricError::EmptyInput("fleiss_kappa"));
    }
    let n = matrix.raters(0);
    if n < 2 {
        return Err(MetricError::Undefined("fleiss_kappa needs at least two raters per item".into()));
    }
    if let Some(i) = (0..matrix.items()).find(|&i| matrix.raters(i) != n) {
        return Err(MetricError::Undefined(format!(
            "fleiss_kappa: item {i} has {} raters, expected {n}",
            matrix.raters(i)
        )));
    }
    let items = matrix.items() as f64;
    let nf = n as f64;
    let mut p_bar = 0.0;
    let mut totals = [0u64; 3];
    for row in &matrix.counts {
        let sq: u64 = row.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        p_bar += (sq as f64 - nf) / (nf * (nf - 1.0));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += u64::from(c);
        }
    }
    p_bar /= items;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / (items * nf)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(MetricError::Undefined("fleiss_kappa: all ratings fall in one category".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Difference function for Krippendorff's alpha.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaDistance {
    #[default]
    Interval,
    Ordinal,
    Nominal,
}

impl FromStr for AlphaDistance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "interval" => Ok(AlphaDistance::Interval),
            "ordinal" => Ok(AlphaDistance::Ordinal),
            "nominal" => Ok(AlphaDistance::Nominal),
            other => Err(format!("unknown distance `{other}`")),
        }
    }
}

/// Krippendorff's alpha over units of ratings; each unit lists the values
/// it received, so missing ratings are simply absent. Units with fewer than
/// two values are not pairable and are ignored.
pub fn krippendorff_alpha(units: &[Vec<f64>], distance: AlphaDistance) -> Result<f64, MetricError> {
    if units.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite("krippendorff_alpha input"));
    }
    let mut values: Vec<f64> = units.iter().filter(|u| u.len() >= 2).flatten().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();
    if values.is_empty() {
        return Err(MetricError::EmptyInput("krippendorff_alpha needs a unit with two ratings"));
    }
    let v = values.len();
    let index = |x: f64| values.binary_search_by(|p| p.partial_cmp(&x).expect("finite")).expect("value present");

    // coincidence matrix
    let mut o = vec![vec![0.0; v]; v];
    for unit in units.iter().filter(|u| u.len() >= 2) {
        let w = 1.0 / (unit.len() as f64 - 1.0);
        let idx: Vec<usize> = unit.iter().map(|&x| index(x)).collect();
        for (i, &a) in idx.iter().enumerate() {
            for (j, &b) in idx.iter().enumerate() {
                if i != j {
                    o[a][b] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();

    let delta = |c: usize, k: usize| -> f64 {
        match distance {
            AlphaDistance::Nominal => f64::from(u8::from(c != k)),
            AlphaDistance::Interval => (values[c] - values[k]).powi(2),
            AlphaDistance::Ordinal => {
                let (lo, hi) = if c <= k { (c, k) } else { (k, c) };
                let span: f64 = n_c[lo..=hi].iter().sum();
                (span - (n_c[lo] + n_c[hi]) / 2.0).powi(2)
            }
        }
    };
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..v {
        for k in 0..v {
            let d = delta(c, k);
            d_o += o[c][k] * d;
            d_e += n_c[c] * n_c[k] * d;
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_e.abs() < 1e-15 {
        return Err(MetricError::Undefined("krippendorff_alpha: no variation in ratings".into()));
    }
    Ok(1.0 - d_o / d_e)
}
