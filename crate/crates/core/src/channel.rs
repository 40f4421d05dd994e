//! Forward-link channel: antenna pattern, free-space channel gains, SINR and
//! Shannon capacity for a set of co-frequency beams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellGrid, CellId};
use crate::pattern::IlluminationPattern;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Physical link parameters. Angles in degrees, gains in dB, distances in km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub altitude_km: f64,
    pub carrier_freq_ghz: f64,
    /// Per-beam transmit power; every beam gets the same share of the total.
    pub beam_power_dbw: f64,
    pub max_tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub beamwidth_3db_deg: f64,
    pub bandwidth_hz: f64,
    pub rx_noise_temp_k: f64,
    pub boltzmann: f64,
    /// Pattern floor relative to peak gain, dB (negative).
    pub sidelobe_floor_db: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            altitude_km: 36_000.0,
            carrier_freq_ghz: 20.0,
            beam_power_dbw: 27.0,
            max_tx_gain_dbi: 40.3,
            rx_gain_dbi: 31.6,
            beamwidth_3db_deg: 1.5,
            bandwidth_hz: 500e6,
            rx_noise_temp_k: 290.0,
            boltzmann: BOLTZMANN,
            sidelobe_floor_db: -30.0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("altitude_km", self.altitude_km),
            ("carrier_freq_ghz", self.carrier_freq_ghz),
            ("beamwidth_3db_deg", self.beamwidth_3db_deg),
            ("bandwidth_hz", self.bandwidth_hz),
            ("rx_noise_temp_k", self.rx_noise_temp_k),
            ("boltzmann", self.boltzmann),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("beam_power_dbw", self.beam_power_dbw),
            ("max_tx_gain_dbi", self.max_tx_gain_dbi),
            ("rx_gain_dbi", self.rx_gain_dbi),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.sidelobe_floor_db.is_finite() && self.sidelobe_floor_db <= 0.0) {
            return Err(Error::Config("sidelobe_floor_db must be <= 0".into()));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_freq_ghz * 1e9)
    }

    pub fn beam_power_w(&self) -> f64 {
        db_to_linear(self.beam_power_dbw)
    }

    pub fn noise_power_w(&self) -> f64 {
        self.boltzmann * self.rx_noise_temp_k * self.bandwidth_hz
    }
}

/// Bessel function of the first kind, order one.
///
/// Power series below |x| = 12, Hankel asymptotic expansion above. Both
/// branches are accurate to roughly 1e-12 absolute over the angles used here.
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < 12.0 {
        let h = ax / 2.0;
        let h2 = h * h;
        let mut term = h;
        let mut sum = h;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -h2 / (k * (k + 1.0));
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        // mu = 4 n^2 = 4 for n = 1
        let mu = 4.0;
        let z8 = 8.0 * ax;
        let mut p = 1.0;
        let mut q = 0.0;
        let mut term = 1.0;
        let mut prev = f64::MAX;
        for k in 1..60 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            term *= (mu - odd * odd) / (kf * z8);
            if term.abs() > prev {
                break;
            }
            prev = term.abs();
            match k % 4 {
                1 => q += term,
                2 => p -= term,
                3 => q -= term,
                _ => p += term,
            }
        }
        let chi = ax - 0.75 * std::f64::consts::PI;
        (2.0 / (std::f64::consts::PI * ax)).sqrt() * (p * chi.cos() - q * chi.sin())
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Normalised reflector pattern `4 |J1(u) / u|^2`, equal to 1 at `u = 0`.
pub fn bessel_pattern(u: f64) -> f64 {
    if u.abs() < 1e-9 {
        return 1.0;
    }
    let r = bessel_j1(u) / u;
    4.0 * r * r
}

/// Root of `bessel_pattern(u) = 1/2` on the main lobe.
pub fn half_power_aperture() -> f64 {
    let (mut lo, mut hi) = (0.1f64, 3.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_pattern(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Transmit gain (linear) at `offaxis_deg` from boresight.
pub fn antenna_gain(offaxis_deg: f64, params: &LinkParams) -> f64 {
    AntennaPattern::new(params).gain(offaxis_deg)
}

/// Antenna pattern with the aperture parameter fitted once.
#[derive(Debug, Clone, Copy)]
pub struct AntennaPattern {
    peak: f64,
    floor: f64,
    u_per_deg: f64,
}

impl AntennaPattern {
    pub fn new(params: &LinkParams) -> Self {
        let u3 = half_power_aperture();
        Self {
            peak: db_to_linear(params.max_tx_gain_dbi),
            floor: db_to_linear(params.sidelobe_floor_db),
            u_per_deg: u3 / (params.beamwidth_3db_deg / 2.0),
        }
    }

    pub fn gain(&self, offaxis_deg: f64) -> f64 {
        let rel = bessel_pattern(self.u_per_deg * offaxis_deg.abs()).max(self.floor);
        self.peak * rel
    }
}

/// Off-axis angle (degrees) of `user_cell` from a beam pointed at `beam_cell`.
pub fn offaxis_angle_deg(
    beam_cell: CellId,
    user_cell: CellId,
    grid: &CellGrid,
    params: &LinkParams,
) -> Result<f64> {
    let offset = grid.distance(beam_cell, user_cell)?;
    Ok((offset / params.altitude_km).atan().to_degrees())
}

/// `|h|^2` between the beam pointed at `beam_cell` and the user in `user_cell`.
pub fn channel_coefficient2(
    beam_cell: CellId,
    user_cell: CellId,
    grid: &CellGrid,
    params: &LinkParams,
) -> Result<f64> {
    let pattern = AntennaPattern::new(params);
    coefficient2_with(&pattern, beam_cell, user_cell, grid, params)
}

fn coefficient2_with(
    pattern: &AntennaPattern,
    beam_cell: CellId,
    user_cell: CellId,
    grid: &CellGrid,
    params: &LinkParams,
) -> Result<f64> {
    let theta = offaxis_angle_deg(beam_cell, user_cell, grid, params)?;
    let slant_m = params.altitude_km.hypot(grid.radial_offset(user_cell)) * 1e3;
    let spreading = 4.0 * std::f64::consts::PI * slant_m / params.wavelength_m();
    Ok(pattern.gain(theta) * db_to_linear(params.rx_gain_dbi) / (spreading * spreading))
}

/// Precomputed channel state for a static grid.
#[derive(Debug, Clone)]
pub struct LinkBudget {
    n: usize,
    /// `gain2[beam * n + user]`
    gain2: Vec<f64>,
    /// `rx_power[user * n + beam] = P |h_{beam,user}|^2`, row per victim user.
    rx_power: Vec<f64>,
    noise_w: f64,
    beam_power_w: f64,
    bandwidth_hz: f64,
}

impl LinkBudget {
    pub fn new(grid: &CellGrid, params: &LinkParams) -> Result<Self> {
        params.validate()?;
        let n = grid.len();
        let pattern = AntennaPattern::new(params);
        let p = params.beam_power_w();
        let mut gain2 = vec![0.0; n * n];
        let mut rx_power = vec![0.0; n * n];
        for beam in 0..n {
            for user in 0..n {
                let g = coefficient2_with(&pattern, beam, user, grid, params)?;
                gain2[beam * n + user] = g;
                rx_power[user * n + beam] = p * g;
            }
        }
        Ok(Self {
            n,
            gain2,
            rx_power,
            noise_w: params.noise_power_w(),
            beam_power_w: p,
            bandwidth_hz: params.bandwidth_hz,
        })
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn gain2(&self, beam_cell: CellId, user_cell: CellId) -> f64 {
        self.gain2[beam_cell * self.n + user_cell]
    }

    /// Received power at `user_cell` from the beam pointed at `beam_cell`, W.
    #[inline]
    pub fn rx_power(&self, beam_cell: CellId, user_cell: CellId) -> f64 {
        self.rx_power[user_cell * self.n + beam_cell]
    }

    /// Row-major received-power matrix (victim user by beam cell) and its side.
    #[inline]
    pub(crate) fn rx_matrix(&self) -> (&[f64], usize) {
        (&self.rx_power, self.n)
    }

    /// Received power row for one victim user, indexed by beam cell.
    #[inline]
    pub(crate) fn rx_row(&self, user_cell: CellId) -> &[f64] {
        &self.rx_power[user_cell * self.n..(user_cell + 1) * self.n]
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_w
    }

    pub fn beam_power(&self) -> f64 {
        self.beam_power_w
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth_hz
    }

    /// Noise-limited capacity of the best cell (bits/s), the per-beam ceiling.
    pub fn peak_capacity(&self) -> f64 {
        (0..self.n)
            .map(|c| self.bandwidth_hz * (1.0 + self.rx_power(c, c) / self.noise_w).log2())
            .fold(0.0, f64::max)
    }

    /// Capacity (bits/s) of every cell under `pattern` with interference from
    /// all other served cells; zero for unserved cells.
    pub fn pattern_capacities(&self, pattern: &IlluminationPattern) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &user in pattern.cells() {
            let row = self.rx_row(user);
            let mut interference = 0.0;
            for &beam in pattern.cells() {
                if beam != user {
                    interference += row[beam];
                }
            }
            let sinr = row[user] / (self.noise_w + interference);
            out[user] = self.bandwidth_hz * (1.0 + sinr).log2();
        }
        out
    }
}

/// Linear SINR of `user_cell` with interference from `interferers` only.
pub fn sinr(
    user_cell: CellId,
    pattern: &IlluminationPattern,
    budget: &LinkBudget,
    interferers: &[CellId],
) -> Result<f64> {
    if !pattern.contains(user_cell) {
        return Err(Error::CellNotServed(user_cell));
    }
    let mut interference = 0.0;
    for &l in interferers {
        if l == user_cell || !pattern.contains(l) {
            return Err(Error::Invariant(format!(
                "interferer {l} must be a served cell other than {user_cell}"
            )));
        }
        interference += budget.rx_power(l, user_cell);
    }
    Ok(budget.rx_power(user_cell, user_cell) / (budget.noise_power() + interference))
}

/// Shannon capacity in bits/s; zero for a cell the pattern does not serve.
pub fn capacity(
    user_cell: CellId,
    pattern: &IlluminationPattern,
    budget: &LinkBudget,
    interferers: &[CellId],
) -> Result<f64> {
    if !pattern.contains(user_cell) {
        return Ok(0.0);
    }
    let s = sinr(user_cell, pattern, budget, interferers)?;
    Ok(budget.bandwidth() * (1.0 + s).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_grid, DEFAULT_CELL_DIAMETER_KM};

    fn series_j1(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut fact_k = 1.0;
        for k in 0..40 {
            if k > 0 {
                fact_k *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (x / 2.0).powi(2 * k + 1) / (fact_k * fact_k * (k as f64 + 1.0));
        }
        sum
    }

    #[test]
    fn j1_reference_values() {
        // Abramowitz & Stegun table 9.1
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-13);
        assert!((bessel_j1(5.0) - (-0.327_579_137_591_465_2)).abs() < 1e-13);
        assert!((bessel_j1(10.0) - 0.043_472_746_168_861_44).abs() < 1e-12);
        assert!(bessel_j1(3.831_705_970_207_512).abs() < 1e-12);
        assert_eq!(bessel_j1(-2.0), -bessel_j1(2.0));
    }

    #[test]
    fn j1_branches_agree_with_integral() {
        // J1(x) = 1/pi * int_0^pi cos(t - x sin t) dt, trapezoid is spectrally accurate here
        let integral = |x: f64| {
            let m = 4000;
            let h = std::f64::consts::PI / m as f64;
            let f = |t: f64| (t - x * t.sin()).cos();
            let mut s = 0.5 * (f(0.0) + f(std::f64::consts::PI));
            for i in 1..m {
                s += f(i as f64 * h);
            }
            s * h / std::f64::consts::PI
        };
        let mut x = 0.05;
        while x < 60.0 {
            assert!((bessel_j1(x) - integral(x)).abs() < 1e-11, "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn aperture_parameter_matches_bisection_oracle() {
        let f = |u: f64| 4.0 * (series_j1(u) / u).powi(2) - 0.5;
        let (mut lo, mut hi) = (1.0, 2.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let u3 = half_power_aperture();
        assert!((u3 - lo).abs() < 1e-12);
        assert!((u3 - 1.6).abs() < 0.05);
    }

    #[test]
    fn gain_peak_and_half_power() {
        let p = LinkParams::default();
        assert!((linear_to_db(antenna_gain(0.0, &p)) - 40.3).abs() < 1e-12);
        assert!((linear_to_db(antenna_gain(0.75, &p)) - 37.3).abs() < 0.05);
    }

    #[test]
    fn gain_main_lobe_monotone_and_floored() {
        let p = LinkParams::default();
        let pat = AntennaPattern::new(&p);
        let mut prev = f64::MAX;
        let mut theta = 0.0;
        while theta < 1.5 {
            let g = pat.gain(theta);
            assert!(g < prev);
            prev = g;
            theta += 0.01;
        }
        let floor = db_to_linear(40.3 - 30.0);
        for i in 0..400 {
            assert!(pat.gain(i as f64 * 0.05) >= floor * (1.0 - 1e-12));
        }
    }

    #[test]
    fn boresight_at_nadir() {
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let p = LinkParams::default();
        let h2 = channel_coefficient2(0, 0, &grid, &p).unwrap();
        let lambda = p.wavelength_m();
        let expect = db_to_linear(40.3)
            * db_to_linear(31.6)
            * (lambda / (4.0 * std::f64::consts::PI * 36_000e3)).powi(2);
        assert!((h2 / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_drops_off_boresight() {
        let grid = generate_grid(6, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let p = LinkParams::default();
        let far = (0..grid.len())
            .find(|&c| (grid.distance(0, c).unwrap() - 5.0 * DEFAULT_CELL_DIAMETER_KM).abs() < 1e-6)
            .unwrap();
        assert!(
            channel_coefficient2(0, far, &grid, &p).unwrap()
                < channel_coefficient2(0, 0, &grid, &p).unwrap()
        );
    }

    #[test]
    fn gain_matrix_matches_straight_line_oracle() {
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let p = LinkParams::default();
        let budget = LinkBudget::new(&grid, &p).unwrap();
        let u3 = {
            let (mut lo, mut hi) = (1.0, 2.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if 4.0 * (series_j1(mid) / mid).powi(2) > 0.5 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            lo
        };
        let lambda = 299_792_458.0 / 20e9;
        for k in 0..grid.len() {
            for n in 0..grid.len() {
                let (ck, cn) = (grid.cells()[k], grid.cells()[n]);
                let off = ((ck.x - cn.x).powi(2) + (ck.y - cn.y).powi(2)).sqrt();
                let theta = (off / 36_000.0).atan().to_degrees();
                let u = u3 * theta / 0.75;
                let rel = if u == 0.0 {
                    1.0
                } else {
                    4.0 * (series_j1(u) / u).powi(2)
                };
                let gt = 10f64.powf(4.03) * rel.max(1e-3);
                let d = ((36_000.0f64).powi(2) + cn.x.powi(2) + cn.y.powi(2)).sqrt() * 1e3;
                let expect =
                    gt * 10f64.powf(3.16) / (4.0 * std::f64::consts::PI * d / lambda).powi(2);
                let got = budget.gain2(k, n);
                assert!((got / expect - 1.0).abs() < 1e-9, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn equal_offsets_equal_pattern_gain() {
        // Only the antenna term depends on the offset; remove the slant-range factor.
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let p = LinkParams::default();
        let b = LinkBudget::new(&grid, &p).unwrap();
        let n = grid.len();
        let norm = |k: usize, u: usize| {
            let d = p.altitude_km.hypot(grid.radial_offset(u));
            b.gain2(k, u) * d * d
        };
        for a in 0..n {
            for c in 0..n {
                for e in 0..n {
                    for f in 0..n {
                        let (d1, d2) = (grid.distance(a, c).unwrap(), grid.distance(e, f).unwrap());
                        if (d1 - d2).abs() < 1e-9 {
                            assert!((norm(a, c) / norm(e, f) - 1.0).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sinr_noise_limited_and_monotone() {
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let b = LinkBudget::new(&grid, &LinkParams::default()).unwrap();
        let pat = IlluminationPattern::new(vec![0, 1, 2, 10, 20], grid.len()).unwrap();
        let alone = sinr(0, &pat, &b, &[]).unwrap();
        assert_eq!(alone, b.rx_power(0, 0) / b.noise_power());
        let one = sinr(0, &pat, &b, &[1]).unwrap();
        let two = sinr(0, &pat, &b, &[1, 20]).unwrap();
        assert!(one < alone && two < one);
        assert!(matches!(
            sinr(5, &pat, &b, &[]),
            Err(Error::CellNotServed(5))
        ));
        assert!(sinr(0, &pat, &b, &[0]).is_err());
        assert!(sinr(0, &pat, &b, &[7]).is_err());
    }

    #[test]
    fn capacity_zero_when_unserved() {
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let b = LinkBudget::new(&grid, &LinkParams::default()).unwrap();
        let pat = IlluminationPattern::new(vec![0, 1], grid.len()).unwrap();
        assert_eq!(capacity(5, &pat, &b, &[]).unwrap(), 0.0);
        assert!(capacity(0, &pat, &b, &[1]).unwrap() > 0.0);
        let caps = b.pattern_capacities(&pat);
        assert_eq!(caps.iter().filter(|&&c| c > 0.0).count(), 2);
    }

    #[test]
    fn unit_sinr_gives_bandwidth() {
        // log2(1 + 1) = 1 bit/s/Hz
        assert_eq!(500e6 * (1.0f64 + 1.0).log2(), 500e6);
    }

    #[test]
    fn nominal_link_figures() {
        let grid = generate_grid(3, DEFAULT_CELL_DIAMETER_KM).unwrap();
        let b = LinkBudget::new(&grid, &LinkParams::default()).unwrap();
        let snr_db = linear_to_db(b.rx_power(0, 0) / b.noise_power());
        assert!(snr_db > 5.0 && snr_db < 8.0, "snr {snr_db}");
        assert!(
            (b.peak_capacity() - 500e6 * (1.0 + b.rx_power(0, 0) / b.noise_power()).log2()).abs()
                < 1e-3
        );
    }
}
