//! SLIC superpixels: grid-seeded local k-means in a joint color/position
//! space, followed by a connectivity pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{ColorSpace, Image};
use crate::error::{Error, Result};
use crate::histogram::Pixel;

/// Feature space used for the color term of the SLIC distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicFeatures {
    pub space: ColorSpace,
    pub channels: Vec<usize>,
}

impl SlicFeatures {
    /// HSV hue and saturation, the default working space.
    pub fn hsv_hs() -> Self {
        SlicFeatures {
            space: ColorSpace::Hsv,
            channels: vec![0, 1],
        }
    }

    pub fn lab() -> Self {
        SlicFeatures {
            space: ColorSpace::Lab,
            channels: vec![0, 1, 2],
        }
    }
}

/// SLIC parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Target number of superpixels `K`.
    pub k: usize,
    /// Weight of the spatial term relative to the color term.
    pub compactness: f64,
    pub iterations: usize,
    pub features: SlicFeatures,
}

impl SlicParams {
    pub fn new(k: usize, compactness: f64) -> Self {
        SlicParams {
            k,
            compactness,
            iterations: 10,
            features: SlicFeatures::hsv_hs(),
        }
    }
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams::new(500, 10.0)
    }
}

/// Color components are scaled from `[0, 1]` to `[0, COLOR_SCALE]` before
/// distances are taken, which puts them on the same footing as CIELAB
/// lightness and keeps the customary compactness of 10 meaningful.
const COLOR_SCALE: f64 = 100.0;

/// A partition of the image into connected superpixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpixelPartition {
    width: usize,
    height: usize,
    assignment: Vec<u32>,
    members: Vec<Vec<u32>>,
}

impl SuperpixelPartition {
    /// Builds a partition from a per-pixel assignment with contiguous ids.
    pub fn from_assignment(width: usize, height: usize, assignment: Vec<u32>) -> Result<Self> {
        if assignment.len() != width * height || assignment.is_empty() {
            return Err(Error::input("assignment does not match the image size"));
        }
        let k = assignment.iter().max().map_or(0, |&m| m as usize + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &a) in assignment.iter().enumerate() {
            members[a as usize].push(i as u32);
        }
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::input("superpixel ids are not contiguous"));
        }
        Ok(SuperpixelPartition {
            width,
            height,
            assignment,
            members,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `K'`, the number of superpixels actually produced.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Superpixel id of every pixel in raster order.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn superpixel_of(&self, p: Pixel) -> usize {
        self.assignment[p.index(self.width)] as usize
    }

    /// Raster indices of the pixels in superpixel `k`, ascending.
    pub fn members(&self, k: usize) -> &[u32] {
        &self.members[k]
    }

    pub fn member_lists(&self) -> &[Vec<u32>] {
        &self.members
    }

    /// True if every superpixel is 4-connected.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.assignment.len()];
        let mut stack = Vec::new();
        for (k, members) in self.members.iter().enumerate() {
            let start = members[0] as usize;
            seen[start] = true;
            stack.push(start);
            let mut reached = 0;
            while let Some(i) = stack.pop() {
                reached += 1;
                for j in neighbors4(i, self.width, self.height) {
                    if !seen[j] && self.assignment[j] as usize == k {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if reached != members.len() {
                return false;
            }
        }
        true
    }

    /// Pixels lying on a boundary between two superpixels (right or down neighbor differs).
    pub fn boundary_mask(&self) -> Vec<bool> {
        let (w, h) = (self.width, self.height);
        (0..w * h)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                (c + 1 < w && self.assignment[i + 1] != self.assignment[i])
                    || (r + 1 < h && self.assignment[i + w] != self.assignment[i])
            })
            .collect()
    }
}

fn neighbors4(i: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (r + 1 < h).then(|| i + w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

#[derive(Debug, Clone)]
struct Center {
    row: f64,
    col: f64,
    color: Vec<f64>,
}

/// Runs SLIC on `image`.
pub fn slic(image: &Image, params: &SlicParams) -> Result<SuperpixelPartition> {
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    if params.k == 0 || params.k > n {
        return Err(Error::input(format!(
            "superpixel count {} must lie in [1, {n}]",
            params.k
        )));
    }
    if !(params.compactness > 0.0) {
        return Err(Error::input("compactness must be positive"));
    }
    let dims = params.features.channels.len();
    let features: Vec<f64> = image
        .to_space(params.features.space)?
        .select_channels(&params.features.channels)?
        .into_iter()
        .map(|v| v * COLOR_SCALE)
        .collect();
    let feat = |i: usize| &features[i * dims..(i + 1) * dims];

    let step = (n as f64 / params.k as f64).sqrt();
    let mut centers = grid_centers(w, h, step, &features, dims);

    let spatial_weight = (params.compactness / step).powi(2);
    let radius = step.ceil() as isize;
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];

    for _ in 0..params.iterations.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        // Each row band is owned by one task; centers only read.
        labels
            .par_chunks_mut(w)
            .zip(dist.par_chunks_mut(w))
            .enumerate()
            .for_each(|(r, (lrow, drow))| {
                for (k, c) in centers.iter().enumerate() {
                    let cr = c.row.round() as isize;
                    if (r as isize - cr).abs() > radius {
                        continue;
                    }
                    let cc = c.col.round() as isize;
                    let c0 = (cc - radius).max(0) as usize;
                    let c1 = ((cc + radius) as usize).min(w - 1);
                    let dr = r as f64 - c.row;
                    for col in c0..=c1 {
                        let i = r * w + col;
                        let dc: f64 = feat(i)
                            .iter()
                            .zip(&c.color)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        let dcol = col as f64 - c.col;
                        let d = dc + (dr * dr + dcol * dcol) * spatial_weight;
                        if d < drow[col] {
                            drow[col] = d;
                            lrow[col] = k as u32;
                        }
                    }
                }
            });

        let mut sums = vec![(0.0f64, 0.0f64, vec![0.0f64; dims], 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l == u32::MAX {
                continue;
            }
            let s = &mut sums[l as usize];
            s.0 += (i / w) as f64;
            s.1 += (i % w) as f64;
            for (acc, v) in s.2.iter_mut().zip(feat(i)) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (c, (sr, sc, scol, cnt)) in centers.iter_mut().zip(sums) {
            if cnt > 0 {
                let inv = 1.0 / cnt as f64;
                c.row = sr * inv;
                c.col = sc * inv;
                c.color = scol.into_iter().map(|v| v * inv).collect();
            }
        }
    }

    let min_size = ((n as f64 / params.k as f64) / 4.0).floor() as usize;
    let assignment = enforce_connectivity(&labels, w, h, min_size);
    SuperpixelPartition::from_assignment(w, h, assignment)
}

/// Grid seeds at spacing `step`, each moved to the lowest-gradient pixel of its 3x3 neighborhood.
fn grid_centers(w: usize, h: usize, step: f64, features: &[f64], dims: usize) -> Vec<Center> {
    let nx = ((w as f64 / step).round() as usize).max(1);
    let ny = ((h as f64 / step).round() as usize).max(1);
    let feat = |r: usize, c: usize| &features[(r * w + c) * dims..(r * w + c + 1) * dims];
    let sq =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let gradient = |r: usize, c: usize| -> f64 {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
        sq(feat(r, c1), feat(r, c0)) + sq(feat(r1, c), feat(r0, c))
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let r = (((gy as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let c = (((gx as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let mut best = (gradient(r, c), r, c);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let g = gradient(rr, cc);
                    if g < best.0 {
                        best = (g, rr, cc);
                    }
                }
            }
            let (_, r, c) = best;
            centers.push(Center {
                row: r as f64,
                col: c as f64,
                color: feat(r, c).to_vec(),
            });
        }
    }
    centers
}

/// Splits every label into its 4-connected components, merges components
/// smaller than `min_size` into the largest adjacent component, and
/// renumbers the survivors in raster order of first appearance.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut sizes: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for j in neighbors4(i, w, h) {
                if comp[j] == u32::MAX && labels[j] == label {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }

    // adjacency with shared-border lengths
    let ncomp = sizes.len();
    let mut adjacency: Vec<std::collections::BTreeMap<u32, usize>> =
        vec![Default::default(); ncomp];
    for i in 0..n {
        let a = comp[i];
        let (r, c) = (i / w, i % w);
        for j in [(c + 1 < w).then(|| i + 1), (r + 1 < h).then(|| i + w)]
            .into_iter()
            .flatten()
        {
            let b = comp[j];
            if a != b {
                *adjacency[a as usize].entry(b).or_default() += 1;
                *adjacency[b as usize].entry(a).or_default() += 1;
            }
        }
    }

    let mut parent: Vec<u32> = (0..ncomp as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let p = parent[x as usize];
            parent[x as usize] = parent[p as usize];
            x = p;
        }
        x
    }
    let mut merged_size = sizes.clone();
    let mut groups: Vec<Vec<usize>> = (0..ncomp).map(|c| vec![c]).collect();
    let mut order: Vec<usize> = (0..ncomp).filter(|&c| sizes[c] < min_size).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let root = find(&mut parent, c as u32);
        if merged_size[root as usize] >= min_size {
            continue;
        }
        // The group is connected, so attaching it to any neighbor of any
        // member keeps the union connected.
        let mut best: Option<(usize, u32)> = None;
        for &g in &groups[root as usize] {
            for &nb in adjacency[g].keys() {
                let r = find(&mut parent, nb);
                if r == root {
                    continue;
                }
                let s = merged_size[r as usize];
                if best.map_or(true, |(bs, br)| s > bs || (s == bs && r < br)) {
                    best = Some((s, r));
                }
            }
        }
        if let Some((_, target)) = best {
            parent[root as usize] = target;
            merged_size[target as usize] += merged_size[root as usize];
            let moved = std::mem::take(&mut groups[root as usize]);
            groups[target as usize].extend(moved);
        }
    }

    let mut remap = vec![u32::MAX; ncomp];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for i in 0..n {
        let r = find(&mut parent, comp[i]) as usize;
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        out[i] = remap[r];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: usize, h: usize) -> Image {
        Image::from_rgb8(w, h, &[200, 40, 40].repeat(w * h)).unwrap()
    }

    #[test]
    fn single_superpixel_on_uniform_image() {
        let p = slic(&uniform(17, 9), &SlicParams::new(1, 10.0)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.members(0).len(), 17 * 9);
    }

    #[test]
    fn uniform_image_splits_like_grid_voronoi() {
        let p = slic(&uniform(20, 20), &SlicParams::new(4, 10.0)).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.is_connected());
        // Voronoi cells of seeds at (5,5), (5,15), (15,5), (15,15)
        let oracle = |r: usize, c: usize| (r >= 10) as u32 * 2 + (c >= 10) as u32;
        let mut agree = 0;
        for r in 0..20 {
            for c in 0..20 {
                let k = p.superpixel_of(Pixel::new(r, c));
                let o = oracle(r, c) as usize;
                agree += usize::from(
                    p.superpixel_of(Pixel::new(
                        if o >= 2 { 15 } else { 5 },
                        if o % 2 == 1 { 15 } else { 5 },
                    )) == k,
                );
            }
        }
        assert!(agree >= 380, "{agree}");
        for m in p.member_lists() {
            assert!((80..=120).contains(&m.len()), "{}", m.len());
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(slic(&uniform(4, 4), &SlicParams::new(17, 10.0)).is_err());
        assert!(slic(&uniform(4, 4), &SlicParams::new(0, 10.0)).is_err());
        assert!(slic(&uniform(4, 4), &SlicParams::new(2, 0.0)).is_err());
    }

    #[test]
    fn connectivity_pass_splits_and_merges() {
        // label 0 appears in two separate blocks; a lone pixel of label 2 is tiny
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 1, 1, 0, 0,
            0, 0, 1, 1, 0, 0,
            0, 0, 1, 2, 0, 0,
            0, 0, 1, 1, 0, 0,
        ];
        let out = enforce_connectivity(&labels, 6, 4, 2);
        let p = SuperpixelPartition::from_assignment(6, 4, out).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.is_connected());
        // the stray pixel joins its largest neighbor, the right-hand block (8 px vs 7)
        assert_eq!(
            p.superpixel_of(Pixel::new(2, 3)),
            p.superpixel_of(Pixel::new(2, 4))
        );
    }

    #[test]
    fn partition_and_determinism_on_textured_image() {
        let (w, h) = (60, 40);
        let mut bytes = Vec::with_capacity(w * h * 3);
        for r in 0..h {
            for c in 0..w {
                let v = ((r * 7 + c * 13) % 97) as u8;
                bytes.extend_from_slice(&[v.wrapping_mul(3), (c * 4) as u8, (r * 6) as u8]);
            }
        }
        let img = Image::from_rgb8(w, h, &bytes).unwrap();
        let params = SlicParams::new(24, 10.0);
        let a = slic(&img, &params).unwrap();
        let b = slic(&img, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
        let mut covered = vec![0u8; w * h];
        for m in a.member_lists() {
            for &i in m {
                covered[i as usize] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert!((12..=48).contains(&a.len()));
    }
}
