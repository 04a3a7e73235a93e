//! Spectral row seriation of the rate matrix and its shaded rendering.
//!
//! Rows are ordered by the Fiedler vector of the Laplacian of the
//! similarity `S = max(D) - D`. The spectral order is then polished by a
//! deterministic 2-SUM descent (pairwise swaps, plus short reversals and
//! insertions inside a window) which never increases
//! `sum_ij S_ij (pos_i - pos_j)^2`. All work happens with subjects sorted
//! by label, so the result does not depend on the input order. The final
//! orientation places the smallest label before the largest one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data_model::{Group, Partition};
use crate::error::{Error, Result};
use crate::hierarchical::DissimilarityMatrix;

pub type Rgb = [u8; 3];

pub const BLUE: Rgb = [0, 0, 255];
pub const WHITE: Rgb = [255, 255, 255];
pub const RED: Rgb = [255, 0, 0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowMethod {
    #[default]
    Spectral,
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinRule {
    /// Equal-width bins over `[-a, a]`, `a = max |rate|`.
    #[default]
    Symmetric,
    /// Bins at the empirical `i/p` quantiles of all cells.
    Quantile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriationConfig {
    pub row_method: RowMethod,
    pub shades: usize,
    /// One colour per shade, from strongest decrease to strongest increase.
    pub palette: Vec<Rgb>,
    pub bins: BinRule,
    /// Apply the 2-SUM descent after the spectral order.
    pub refine: bool,
    /// Longest reversal or insertion tried by the descent.
    pub refine_window: usize,
}

impl Default for SeriationConfig {
    fn default() -> Self {
        SeriationConfig::with_shades(3)
    }
}

impl SeriationConfig {
    pub fn with_shades(p: usize) -> Self {
        SeriationConfig {
            row_method: RowMethod::Spectral,
            shades: p,
            palette: diverging_palette(p),
            bins: BinRule::Symmetric,
            refine: true,
            refine_window: 8,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.shades < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 shades, got {}", self.shades)));
        }
        if self.palette.len() != self.shades {
            return Err(Error::InvalidParameter(format!(
                "palette has {} colours for {} shades",
                self.palette.len(),
                self.shades
            )));
        }
        Ok(())
    }
}

/// `p` colours running blue, white, red with linear blending in between.
pub fn diverging_palette(p: usize) -> Vec<Rgb> {
    let blend = |a: Rgb, b: Rgb, t: f64| -> Rgb {
        std::array::from_fn(|c| (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8)
    };
    (0..p)
        .map(|i| {
            let t = if p == 1 { 0.5 } else { i as f64 / (p - 1) as f64 };
            if t <= 0.5 {
                blend(BLUE, WHITE, 2.0 * t)
            } else {
                blend(WHITE, RED, 2.0 * t - 1.0)
            }
        })
        .collect()
}

/// Reads a colour name (`blue`, `white`, `red`, `black`) or `#rrggbb`.
pub fn parse_colour(s: &str) -> Result<Rgb> {
    let named = match s.to_ascii_lowercase().as_str() {
        "blue" => Some(BLUE),
        "white" => Some(WHITE),
        "red" => Some(RED),
        "black" => Some([0, 0, 0]),
        _ => None,
    };
    if let Some(c) = named {
        return Ok(c);
    }
    let hex = s.strip_prefix('#').filter(|h| h.len() == 6 && h.is_ascii());
    let bad = || Error::InvalidParameter(format!("unknown colour `{s}`"));
    let hex = hex.ok_or_else(bad)?;
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
    Ok([byte(0)?, byte(2)?, byte(4)?])
}

/// Row permutation: entry `r` is the input row shown at position `r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrder {
    indices: Vec<usize>,
}

impl RowOrder {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            if i >= indices.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter("row order is not a permutation".into()));
            }
        }
        Ok(RowOrder { indices })
    }

    pub fn identity(n: usize) -> Self {
        RowOrder { indices: (0..n).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of each input row.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.indices.len()];
        for (p, &i) in self.indices.iter().enumerate() {
            pos[i] = p;
        }
        pos
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seriation {
    pub order: RowOrder,
    pub warning: Option<String>,
}

/// 2-SUM objective `sum_{i<j} S_ij (pos_i - pos_j)^2` of an order.
pub fn two_sum(similarity: &DMatrix<f64>, order: &RowOrder) -> f64 {
    let pos = order.positions();
    let n = pos.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pos[i] as f64 - pos[j] as f64;
            total += similarity[(i, j)] * d * d;
        }
    }
    total
}

/// `S = max(D) - D` with a zero diagonal.
pub fn similarity(dist: &DissimilarityMatrix) -> DMatrix<f64> {
    let n = dist.len();
    let top = dist.max();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { top - dist.get(i, j) })
}

pub fn spectral_order(dist: &DissimilarityMatrix, cfg: &SeriationConfig) -> Result<Seriation> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("seriation needs at least 2 subjects, got {n}")));
    }
    if cfg.row_method == RowMethod::Identity {
        return Ok(Seriation {
            order: RowOrder::identity(n),
            warning: None,
        });
    }
    let mut canon: Vec<usize> = (0..n).collect();
    canon.sort_by(|&a, &b| dist.labels[a].cmp(&dist.labels[b]));
    let full = similarity(dist);
    let s = DMatrix::from_fn(n, n, |i, j| full[(canon[i], canon[j])]);

    let (mut order, warning) = order_similarity(&s);
    if cfg.refine {
        refine_two_sum(&s, &mut order, cfg.refine_window);
    }
    orient(&mut order, n);
    let indices = order.into_iter().map(|i| canon[i]).collect();
    Ok(Seriation {
        order: RowOrder::new(indices)?,
        warning,
    })
}

fn orient(order: &mut [usize], n: usize) {
    let at = |x: usize| order.iter().position(|&i| i == x).unwrap_or(0);
    if at(0) > at(n - 1) {
        order.reverse();
    }
}

fn fiedler_order(s: &DMatrix<f64>) -> (Vec<usize>, usize) {
    let n = s.nrows();
    let degree: Vec<f64> = (0..n).map(|i| s.row(i).sum()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| if i == j { degree[i] - s[(i, j)] } else { -s[(i, j)] });
    let eig = SymmetricEigen::new(lap);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = degree.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let zeros = idx.iter().filter(|&&k| eig.eigenvalues[k].abs() <= 1e-10 * scale).count();
    let v = eig.eigenvectors.column(idx[1]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    (order, zeros)
}

fn components(s: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = s.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut head = 0;
        while head < members.len() {
            let u = members[head];
            head += 1;
            for v in 0..n {
                if comp[v] == usize::MAX && s[(u, v)] > 0.0 {
                    comp[v] = id;
                    members.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn order_similarity(s: &DMatrix<f64>) -> (Vec<usize>, Option<String>) {
    let n = s.nrows();
    if n <= 2 {
        return ((0..n).collect(), None);
    }
    let parts = components(s);
    if parts.len() == 1 {
        let (order, zeros) = fiedler_order(s);
        let warning = (zeros > 1).then(|| "similarity spectrum has a repeated zero eigenvalue; order is ambiguous".to_string());
        return (order, warning);
    }
    let mut order = Vec::with_capacity(n);
    for members in &parts {
        let sub = DMatrix::from_fn(members.len(), members.len(), |i, j| s[(members[i], members[j])]);
        let (inner, _) = order_similarity(&sub);
        order.extend(inner.into_iter().map(|i| members[i]));
    }
    let warning = format!(
        "similarity graph has {} disconnected components; they are ordered one after another",
        parts.len()
    );
    (order, Some(warning))
}

/// First-improvement 2-SUM descent. A move is accepted only when it lowers
/// the objective by more than a relative `1e-12`.
fn refine_two_sum(s: &DMatrix<f64>, order: &mut [usize], window: usize) {
    let n = order.len();
    if n < 3 {
        return;
    }
    let degree: Vec<f64> = (0..n).map(|i| s.row(i).sum()).collect();
    let lap = |i: usize, j: usize| if i == j { degree[i] - s[(i, j)] } else { -s[(i, j)] };
    let mut pos = vec![0.0; n];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p as f64;
    }
    // g = L pos, objective = pos' L pos.
    let mut g: Vec<f64> = (0..n).map(|k| order.iter().enumerate().map(|(p, &i)| lap(k, i) * p as f64).sum()).collect();
    let mut objective: f64 = (0..n).map(|i| pos[i] * g[i]).sum();

    let mut moved: Vec<(usize, f64)> = Vec::new();
    let mut candidate: Vec<usize> = Vec::with_capacity(n);
    for _pass in 0..200 {
        let mut improved = false;
        for x in 0..n {
            for y in (x + 1)..n {
                let span = y - x;
                // Swap, then reversal and both insertions for short spans.
                let kinds: &[u8] = if span >= 2 && span < window { &[0, 1, 2, 3] } else { &[0] };
                for &kind in kinds {
                    candidate.clear();
                    candidate.extend_from_slice(&order[x..=y]);
                    match kind {
                        0 => candidate.swap(0, span),
                        1 => candidate.reverse(),
                        2 => candidate.rotate_left(1),
                        _ => candidate.rotate_right(1),
                    }
                    moved.clear();
                    for (off, &item) in candidate.iter().enumerate() {
                        let delta = (x + off) as f64 - pos[item];
                        if delta != 0.0 {
                            moved.push((item, delta));
                        }
                    }
                    let mut change = 0.0;
                    for &(a, da) in &moved {
                        change += 2.0 * da * g[a];
                        for &(b, db) in &moved {
                            change += da * db * lap(a, b);
                        }
                    }
                    if change < -1e-12 * objective.abs().max(1.0) {
                        for &(a, da) in &moved {
                            pos[a] += da;
                        }
                        for (k, gk) in g.iter_mut().enumerate() {
                            *gk += moved.iter().map(|&(a, da)| lap(k, a) * da).sum::<f64>();
                        }
                        order[x..=y].copy_from_slice(&candidate);
                        objective += change;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Shade index of every cell under the configured binning.
pub fn shade_bin(rates: &[Vec<f64>], p: usize, rule: BinRule) -> Result<Vec<Vec<usize>>> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 shades, got {p}")));
    }
    let shade: Box<dyn Fn(f64) -> usize> = match rule {
        BinRule::Symmetric => {
            let a = rates.iter().flatten().fold(0.0f64, |m, r| m.max(r.abs()));
            if a == 0.0 {
                Box::new(move |_| p / 2)
            } else {
                let width = 2.0 * a / p as f64;
                Box::new(move |r| (((r + a) / width).floor().max(0.0) as usize).min(p - 1))
            }
        }
        BinRule::Quantile => {
            let mut all: Vec<f64> = rates.iter().flatten().copied().collect();
            all.sort_by(f64::total_cmp);
            if all.is_empty() || all[0] == all[all.len() - 1] {
                Box::new(move |_| p / 2)
            } else {
                let edges: Vec<f64> = (1..p).map(|i| quantile(&all, i as f64 / p as f64)).collect();
                Box::new(move |r| edges.iter().filter(|&&e| r > e).count())
            }
        }
    };
    Ok(rates.iter().map(|row| row.iter().map(|&r| shade(r)).collect()).collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixmapFormat {
    /// Binary `P6`.
    #[default]
    Binary,
    /// Plain-text `P3`.
    Ascii,
}

/// Renders shaded rows in seriation order, one `scale x scale` block per cell.
pub fn render_matrix_image(
    shades: &[Vec<usize>],
    order: &RowOrder,
    cfg: &SeriationConfig,
    scale: usize,
    format: PixmapFormat,
) -> Result<Vec<u8>> {
    cfg.check()?;
    if order.len() != shades.len() {
        return Err(Error::DimensionMismatch {
            expected: shades.len(),
            found: order.len(),
        });
    }
    if scale == 0 {
        return Err(Error::InvalidParameter("upscale factor must be positive".into()));
    }
    let cols = shades.first().map_or(0, Vec::len);
    if shades.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter("shade rows differ in length".into()));
    }
    if let Some(&bad) = shades.iter().flatten().find(|&&s| s >= cfg.shades) {
        return Err(Error::InvalidParameter(format!("shade {bad} outside palette")));
    }
    let (w, h) = (cols * scale, shades.len() * scale);
    let magic = match format {
        PixmapFormat::Binary => "P6",
        PixmapFormat::Ascii => "P3",
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for &row in order.indices() {
        let mut line: Vec<Rgb> = Vec::with_capacity(w);
        for &shade in &shades[row] {
            line.extend(std::iter::repeat_n(cfg.palette[shade], scale));
        }
        for _ in 0..scale {
            match format {
                PixmapFormat::Binary => line.iter().for_each(|px| out.extend_from_slice(px)),
                PixmapFormat::Ascii => {
                    let text: Vec<String> = line.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect();
                    out.extend_from_slice(text.join(" ").as_bytes());
                    out.push(b'\n');
                }
            }
        }
    }
    Ok(out)
}

/// Contiguous block of `count` rows starting at
/// `floor(start_fraction * (n - count))` of the seriated order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start_fraction: f64,
    pub count: usize,
}

/// Groups `G1, G2, ...` (in span order) taken from row ranges of the order.
pub fn extract_row_groups(order: &RowOrder, labels: &[String], spans: &[Span]) -> Result<Partition> {
    let n = order.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let mut ranges = Vec::with_capacity(spans.len());
    for s in spans {
        if !(0.0..=1.0).contains(&s.start_fraction) || s.count == 0 || s.count > n {
            return Err(Error::InvalidSpans(format!(
                "span ({}, {}) does not fit {n} rows",
                s.start_fraction, s.count
            )));
        }
        let start = (s.start_fraction * (n - s.count) as f64).floor() as usize;
        ranges.push((start, start + s.count));
    }
    let mut sorted = ranges.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(Error::InvalidSpans(format!(
            "rows {}..{} overlap rows {}..{}",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    let groups = ranges
        .iter()
        .enumerate()
        .map(|(g, &(a, b))| Group {
            label: format!("G{}", g + 1),
            subject_ids: order.indices()[a..b].iter().map(|&i| labels[i].clone()).collect(),
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert(
        "spans".into(),
        json!(spans.iter().map(|s| json!([s.start_fraction, s.count])).collect::<Vec<_>>()),
    );
    params.insert("rows".into(), json!(ranges));
    Partition::from_groups("seriation", params, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> DissimilarityMatrix {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let labels = (0..xs.len()).map(|i| format!("s{i:03}")).collect();
        DissimilarityMatrix::euclidean(&pts, labels).unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn line_points_are_ordered_monotonically() {
        let s = spectral_order(&line(&[0.0, 1.0, 2.0, 3.0]), &SeriationConfig::default()).unwrap();
        assert_eq!(s.order.indices(), &[0, 1, 2, 3]);
        let shuffled = spectral_order(&line(&[2.0, 0.0, 3.0, 1.0]), &SeriationConfig::default()).unwrap();
        let xs = [2.0, 0.0, 3.0, 1.0];
        let seen: Vec<f64> = shuffled.order.indices().iter().map(|&i| xs[i]).collect();
        assert!(seen.windows(2).all(|w| w[0] < w[1]) || seen.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn identical_subjects_are_adjacent() {
        let s = spectral_order(&line(&[0.0, 5.0, 1.0, 5.0, 9.0]), &SeriationConfig::default()).unwrap();
        let pos = s.order.positions();
        assert_eq!(pos[1].abs_diff(pos[3]), 1);
    }

    #[test]
    fn disconnected_similarity_warns() {
        // Every distance equals the maximum, so the similarity is zero.
        let d = DissimilarityMatrix::from_condensed(3, vec![1.0; 3], "euclidean", ids(3)).unwrap();
        let s = spectral_order(&d, &SeriationConfig::default()).unwrap();
        assert!(s.warning.is_some());
        assert_eq!(s.order.indices(), &[0, 1, 2]);
    }

    #[test]
    fn identity_method_keeps_rows() {
        let cfg = SeriationConfig {
            row_method: RowMethod::Identity,
            ..SeriationConfig::default()
        };
        assert_eq!(spectral_order(&line(&[3.0, 1.0, 2.0]), &cfg).unwrap().order, RowOrder::identity(3));
        assert!(spectral_order(&line(&[3.0]), &cfg).is_err());
    }

    #[test]
    fn shade_bin_examples() {
        let sym = BinRule::Symmetric;
        assert_eq!(shade_bin(&[vec![-1.0, 0.0, 1.0]], 3, sym).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(shade_bin(&[vec![0.0, 0.0]], 3, sym).unwrap(), vec![vec![1, 1]]);
        assert_eq!(shade_bin(&[vec![-0.5, 0.5]], 2, sym).unwrap(), vec![vec![0, 1]]);
        assert!(shade_bin(&[vec![1.0]], 1, sym).is_err());
        let q = shade_bin(&[vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 3, BinRule::Quantile).unwrap();
        assert_eq!(q, vec![vec![0, 0, 1, 1, 2, 2]]);
    }

    #[test]
    fn palettes() {
        assert_eq!(diverging_palette(3), vec![BLUE, WHITE, RED]);
        assert_eq!(diverging_palette(2), vec![BLUE, RED]);
        assert_eq!(diverging_palette(5)[1], [128, 128, 255]);
        assert_eq!(parse_colour("#00ff80").unwrap(), [0, 255, 128]);
        assert_eq!(parse_colour("Red").unwrap(), RED);
        assert!(parse_colour("#12").is_err());
        let mut cfg = SeriationConfig::default();
        cfg.palette.pop();
        assert!(cfg.check().is_err());
    }

    #[test]
    fn single_red_pixel() {
        let cfg = SeriationConfig::default();
        let bytes = render_matrix_image(&[vec![2]], &RowOrder::identity(1), &cfg, 1, PixmapFormat::Binary).unwrap();
        assert_eq!(bytes, b"P6\n1 1\n255\n\xff\x00\x00".to_vec());
        let ascii = render_matrix_image(&[vec![2]], &RowOrder::identity(1), &cfg, 1, PixmapFormat::Ascii).unwrap();
        assert_eq!(ascii, b"P3\n1 1\n255\n255 0 0\n".to_vec());
    }

    #[test]
    fn rows_follow_order_and_scale() {
        let cfg = SeriationConfig::default();
        let shades = vec![vec![0, 1], vec![2, 2]];
        let id = render_matrix_image(&shades, &RowOrder::identity(2), &cfg, 1, PixmapFormat::Binary).unwrap();
        assert_eq!(&id[11..], &[0, 0, 255, 255, 255, 255, 255, 0, 0, 255, 0, 0]);
        let flipped = RowOrder::new(vec![1, 0]).unwrap();
        let f = render_matrix_image(&shades, &flipped, &cfg, 1, PixmapFormat::Binary).unwrap();
        assert_eq!(&f[11..17], &[255, 0, 0, 255, 0, 0]);
        let big = render_matrix_image(&shades, &flipped, &cfg, 3, PixmapFormat::Binary).unwrap();
        assert!(big.starts_with(b"P6\n6 6\n255\n"));
        assert_eq!(big.len(), 11 + 6 * 6 * 3);
        assert!(render_matrix_image(&shades, &RowOrder::identity(3), &cfg, 1, PixmapFormat::Binary).is_err());
    }

    #[test]
    fn row_order_must_be_permutation() {
        assert!(RowOrder::new(vec![0, 0]).is_err());
        assert!(RowOrder::new(vec![0, 2]).is_err());
        assert_eq!(RowOrder::new(vec![2, 0, 1]).unwrap().positions(), vec![1, 2, 0]);
    }

    #[test]
    fn row_groups() {
        let order = RowOrder::new(vec![3, 1, 0, 2]).unwrap();
        let p = extract_row_groups(&order, &ids(4), &[Span { start_fraction: 0.0, count: 2 }]).unwrap();
        assert_eq!(p.groups()[0].subject_ids, vec!["s3", "s1"]);
        let full = extract_row_groups(
            &order,
            &ids(4),
            &[Span { start_fraction: 0.0, count: 2 }, Span { start_fraction: 1.0, count: 2 }],
        )
        .unwrap();
        assert_eq!(full.n_subjects(), 4);
        let overlap = [Span { start_fraction: 0.0, count: 3 }, Span { start_fraction: 1.0, count: 2 }];
        assert!(matches!(extract_row_groups(&order, &ids(4), &overlap), Err(Error::InvalidSpans(_))));
        assert!(extract_row_groups(&order, &ids(4), &[Span { start_fraction: 0.0, count: 5 }]).is_err());
        assert!(extract_row_groups(&order, &ids(4), &[Span { start_fraction: 1.5, count: 1 }]).is_err());
    }

    #[test]
    fn three_hundred_rows_from_top_middle_bottom() {
        let n = 1143;
        let spans = [0.0, 0.5, 1.0].map(|f| Span { start_fraction: f, count: 100 });
        let p = extract_row_groups(&RowOrder::identity(n), &ids(n), &spans).unwrap();
        assert_eq!(p.sizes(), vec![100, 100, 100]);
        assert_eq!(p.labels().collect::<Vec<_>>(), vec!["G1", "G2", "G3"]);
    }

    #[test]
    fn refinement_never_worsens_objective() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..10 {
            let pts: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.next_f64()).collect()).collect();
            let d = DissimilarityMatrix::euclidean(&pts, ids(12)).unwrap();
            let plain = SeriationConfig {
                refine: false,
                ..SeriationConfig::default()
            };
            let s = similarity(&d);
            let a = two_sum(&s, &spectral_order(&d, &plain).unwrap().order);
            let b = two_sum(&s, &spectral_order(&d, &SeriationConfig::default()).unwrap().order);
            assert!(b <= a + 1e-9 * a);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn order_ignores_input_order(
            pts in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 3..25)
        ) {
            let n = pts.len();
            let labels = ids(n);
            let d = DissimilarityMatrix::euclidean(&pts, labels.clone()).unwrap();
            let fwd = spectral_order(&d, &SeriationConfig::default()).unwrap();
            let rev_pts: Vec<Vec<f64>> = pts.iter().rev().cloned().collect();
            let rev_labels: Vec<String> = labels.iter().rev().cloned().collect();
            let dr = DissimilarityMatrix::euclidean(&rev_pts, rev_labels.clone()).unwrap();
            let rev = spectral_order(&dr, &SeriationConfig::default()).unwrap();
            let a: Vec<&String> = fwd.order.indices().iter().map(|&i| &labels[i]).collect();
            let b: Vec<&String> = rev.order.indices().iter().map(|&i| &rev_labels[i]).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn shading_is_monotone(
            rates in proptest::collection::vec(-5.0f64..5.0, 1..40), p in 2usize..7
        ) {
            for rule in [BinRule::Symmetric, BinRule::Quantile] {
                let shades = shade_bin(std::slice::from_ref(&rates), p, rule).unwrap();
                for i in 0..rates.len() {
                    for j in 0..rates.len() {
                        if rates[i] < rates[j] {
                            prop_assert!(shades[0][i] <= shades[0][j]);
                        }
                    }
                    prop_assert!(shades[0][i] < p);
                }
            }
        }
    }
}
