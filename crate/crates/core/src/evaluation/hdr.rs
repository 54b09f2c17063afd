use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdrOptions {
    /// Grid points per axis.
    pub resolution: usize,
    /// Padding beyond the data range, in bandwidths.
    pub padding: f64,
}

impl Default for HdrOptions {
    fn default() -> Self {
        Self {
            resolution: 200,
            padding: 3.0,
        }
    }
}

/// Kernel density estimate on a grid together with the density level whose
/// super-level set holds the requested mass. `density[i][j]` is the value
/// at `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdrGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub density: Vec<Vec<f64>>,
    pub level: f64,
    pub mass: f64,
    pub bandwidth: [f64; 2],
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

// fractional grid index, clamped into the grid
fn locate(grid: &[f64], v: f64) -> Option<(usize, f64)> {
    let n = grid.len();
    let step = grid[1] - grid[0];
    let t = (v - grid[0]) / step;
    if !(t >= 0.0 && t <= (n - 1) as f64) {
        return None;
    }
    let i = (t.floor() as usize).min(n - 2);
    Some((i, t - i as f64))
}

fn gaussian_weights(h: f64, step: f64) -> Vec<f64> {
    let reach = (4.0 * h / step).ceil() as usize;
    (0..=reach)
        .map(|k| {
            let u = k as f64 * step / h;
            (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect()
}

fn convolve(line: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = line.len() as isize;
    let r = kernel.len() as isize - 1;
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for k in -r..=r {
                let j = i + k;
                if j >= 0 && j < n {
                    s += kernel[k.unsigned_abs()] * line[j as usize];
                }
            }
            s
        })
        .collect()
}

/// Highest-density region of two-dimensional draws: a binned Gaussian KDE
/// with Scott bandwidths `n^{-1/6} sd` per axis.
pub fn hdr_region(xs: &[f64], ys: &[f64], mass: f64, options: &HdrOptions) -> Result<HdrGrid> {
    let n = xs.len();
    if ys.len() != n {
        return Err(Error::DimensionMismatch {
            context: "HDR coordinates",
            expected: n,
            actual: ys.len(),
        });
    }
    if n < 100 {
        return Err(Error::InvalidArgument(format!("HDR needs at least 100 draws, got {n}")));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidArgument(format!("mass must lie in (0, 1), got {mass}")));
    }
    if options.resolution < 10 {
        return Err(Error::InvalidArgument("grid resolution must be >= 10".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("HDR draws must be finite".into()));
    }
    let (_, sx) = mean_sd(xs);
    let (_, sy) = mean_sd(ys);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::InvalidArgument("draws have zero variance".into()));
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let (hx, hy) = (sx * factor, sy * factor);
    let range = |v: &[f64], h: f64| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        linspace(lo - options.padding * h, hi + options.padding * h, options.resolution)
    };
    let gx = range(xs, hx);
    let gy = range(ys, hy);
    let g = options.resolution;

    // linear binning
    let mut counts = vec![vec![0.0; g]; g];
    for (&x, &y) in xs.iter().zip(ys) {
        let (i, fx) = locate(&gx, x).expect("draw inside grid");
        let (j, fy) = locate(&gy, y).expect("draw inside grid");
        counts[i][j] += (1.0 - fx) * (1.0 - fy);
        counts[i + 1][j] += fx * (1.0 - fy);
        counts[i][j + 1] += (1.0 - fx) * fy;
        counts[i + 1][j + 1] += fx * fy;
    }
    let kx = gaussian_weights(hx, gx[1] - gx[0]);
    let ky = gaussian_weights(hy, gy[1] - gy[0]);
    let mut density: Vec<Vec<f64>> = counts.iter().map(|row| convolve(row, &ky)).collect();
    for j in 0..g {
        let col: Vec<f64> = density.iter().map(|row| row[j]).collect();
        for (i, v) in convolve(&col, &kx).into_iter().enumerate() {
            density[i][j] = v / n as f64;
        }
    }
    let mut grid = HdrGrid {
        xs: gx,
        ys: gy,
        density,
        level: 0.0,
        mass,
        bandwidth: [hx, hy],
    };
    let mut at_points: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| grid.density_at(x, y))
        .collect();
    at_points.sort_by(f64::total_cmp);
    // order statistic so that at least `mass * n` draws sit inside
    let k = (((1.0 - mass) * n as f64).floor() as usize).min(n - 1);
    grid.level = at_points[k];
    Ok(grid)
}

impl HdrGrid {
    /// Bilinear interpolation of the grid density; zero outside the grid.
    pub fn density_at(&self, x: f64, y: f64) -> f64 {
        let (Some((i, fx)), Some((j, fy))) = (locate(&self.xs, x), locate(&self.ys, y)) else {
            return 0.0;
        };
        let d = &self.density;
        (1.0 - fx) * (1.0 - fy) * d[i][j]
            + fx * (1.0 - fy) * d[i + 1][j]
            + (1.0 - fx) * fy * d[i][j + 1]
            + fx * fy * d[i + 1][j + 1]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.density_at(x, y) >= self.level
    }

    fn cell_area(&self) -> f64 {
        (self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0])
    }

    /// Area of the region, counting grid cells above the level.
    pub fn area(&self) -> f64 {
        let inside = self
            .density
            .iter()
            .flatten()
            .filter(|v| **v >= self.level)
            .count();
        inside as f64 * self.cell_area()
    }

    /// Whether some grid point inside this region lies inside `other`.
    pub fn overlaps(&self, other: &HdrGrid) -> bool {
        self.xs.iter().enumerate().any(|(i, &x)| {
            self.ys
                .iter()
                .enumerate()
                .any(|(j, &y)| self.density[i][j] >= self.level && other.contains(x, y))
        })
    }

    /// Extent of the region along each axis: `((x_lo, x_hi), (y_lo, y_hi))`.
    pub fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &xv) in self.xs.iter().enumerate() {
            for (j, &yv) in self.ys.iter().enumerate() {
                if self.density[i][j] >= self.level {
                    x = (x.0.min(xv), x.1.max(xv));
                    y = (y.0.min(yv), y.1.max(yv));
                }
            }
        }
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_draws(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = crate::rng::stream(seed, 42, 0);
        (0..n)
            .map(|_| (r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal)))
            .unzip()
    }

    #[test]
    fn standard_normal_area() {
        let (x, y) = normal_draws(100_000, 1);
        let grid = hdr_region(&x, &y, 0.95, &HdrOptions::default()).unwrap();
        let want = std::f64::consts::PI * 5.991_464_547_107_979;
        assert!((grid.area() / want - 1.0).abs() < 0.1, "{}", grid.area());
    }

    #[test]
    fn near_total_mass_covers_every_draw() {
        let (x, y) = normal_draws(2000, 2);
        let grid = hdr_region(&x, &y, 0.999_999, &HdrOptions::default()).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| grid.contains(*a, *b)));
    }

    #[test]
    fn degenerate_draws_rejected() {
        let x = vec![1.0; 200];
        let y: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!(hdr_region(&x, &y, 0.95, &HdrOptions::default()).is_err());
        assert!(hdr_region(&y[..50], &y[..50], 0.95, &HdrOptions::default()).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let (x, y) = normal_draws(5000, 3);
        let grid = hdr_region(&x, &y, 0.5, &HdrOptions::default()).unwrap();
        let total: f64 = grid.density.iter().flatten().sum::<f64>() * grid.cell_area();
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }
}
