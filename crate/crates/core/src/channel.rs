//! RIS-assisted link channels.
//!
//! The received amplitude on link `i → m` combines the direct path with the
//! reflected one, `h_{i,m} + h_{RIS,m}^H φ h_{i,RIS}`, where `φ` is a diagonal
//! of unit-modulus reflection coefficients. Rates follow Shannon capacity over
//! the configured bandwidth.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::planner::LinkPlan;

pub const MAX_RIS_ELEMENTS: usize = 1024;
/// Unit-modulus tolerance for reflection coefficients.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub rice_factor: f64,
    pub los_exponent: f64,
    pub nlos_exponent: f64,
    /// Path loss at 1 m, dB.
    pub ref_loss_db: f64,
    /// Carrier wavelength used for the line-of-sight phase.
    pub wavelength_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 3e6,
            tx_power_dbm: 30.0,
            noise_power_dbm: -90.0,
            rice_factor: 10.0,
            los_exponent: 1.5,
            nlos_exponent: 4.0,
            ref_loss_db: 30.0,
            wavelength_m: 0.1,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("channel params: {what}")));
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.rice_factor >= 0.0) {
            return bad("rice factor must be >= 0");
        }
        if !(self.los_exponent > 0.0) || !(self.nlos_exponent > 0.0) {
            return bad("path-loss exponents must be positive");
        }
        if !(self.wavelength_m > 0.0) {
            return bad("wavelength must be positive");
        }
        Ok(())
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    /// Mean power gain (linear) over `distance` meters.
    pub fn path_gain(&self, distance: f64, obstructed: bool) -> f64 {
        let exponent = if obstructed { self.nlos_exponent } else { self.los_exponent };
        let loss_db = self.ref_loss_db + 10.0 * exponent * distance.log10();
        10f64.powf(-loss_db / 10.0)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub type Point = [f64; 3];

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Axis-aligned box that blocks line of sight.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Obstruction {
    pub min: Point,
    pub max: Point,
}

impl Obstruction {
    /// Slab test: does the segment `a → b` pass through the box interior?
    pub fn blocks(&self, a: Point, b: Point) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for axis in 0..3 {
            let d = b[axis] - a[axis];
            if d.abs() < 1e-12 {
                if a[axis] <= self.min[axis] || a[axis] >= self.max[axis] {
                    return false;
                }
                continue;
            }
            let mut lo = (self.min[axis] - a[axis]) / d;
            let mut hi = (self.max[axis] - a[axis]) / d;
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub car_positions: Vec<Point>,
    pub ris_position: Point,
    pub obstructions: Vec<Obstruction>,
    pub ris_elements: usize,
    /// Element pitch of the square RIS grid, meters. Only the line-of-sight
    /// phase depends on element position; path gain uses the RIS center.
    #[serde(default = "default_spacing")]
    pub element_spacing_m: f64,
}

fn default_spacing() -> f64 {
    0.05
}

impl Geometry {
    /// Element centers on a `ceil(sqrt(M))`-wide grid in the vertical plane
    /// through the RIS center, facing the `(1, 1, 0)` diagonal.
    pub fn element_positions(&self) -> Vec<Point> {
        let m = self.ris_elements;
        let width = (m as f64).sqrt().ceil() as usize;
        let rows = m.div_ceil(width);
        let s = self.element_spacing_m;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        (0..m)
            .map(|k| {
                let u = (k % width) as f64 - (width as f64 - 1.0) / 2.0;
                let v = (k / width) as f64 - (rows as f64 - 1.0) / 2.0;
                let c = self.ris_position;
                [c[0] + u * s * h, c[1] - u * s * h, c[2] + v * s]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_RIS_ELEMENTS).contains(&self.ris_elements) {
            return Err(Error::InvalidArgument(format!(
                "ris_elements must be in 1..={MAX_RIS_ELEMENTS}, got {}",
                self.ris_elements
            )));
        }
        let all = self.car_positions.iter().chain(std::iter::once(&self.ris_position));
        if all.flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("positions must be finite".into()));
        }
        if !(self.element_spacing_m >= 0.0 && self.element_spacing_m.is_finite()) {
            return Err(Error::InvalidArgument("element spacing must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn car_count(&self) -> usize {
        self.car_positions.len()
    }

    pub fn blocked(&self, a: Point, b: Point) -> bool {
        self.obstructions.iter().any(|o| o.blocks(a, b))
    }

    fn checked_distance(&self, a: Point, b: Point, what: &str) -> Result<f64> {
        let d = distance(a, b);
        if d <= 0.0 {
            return Err(Error::InvalidArgument(format!("coincident positions on {what}")));
        }
        Ok(d)
    }
}

/// One channel realization. `direct[i][m]` is car `i` to car `m`; the RIS
/// vectors have one entry per element.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub direct: Vec<Vec<Complex64>>,
    pub car_to_ris: Vec<Vec<Complex64>>,
    pub ris_to_car: Vec<Vec<Complex64>>,
}

impl ChannelSet {
    pub fn car_count(&self) -> usize {
        self.direct.len()
    }

    pub fn ris_elements(&self) -> usize {
        self.car_to_ris.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.car_count();
        let m = self.ris_elements();
        let shapes_ok = self.direct.iter().all(|r| r.len() == n)
            && self.car_to_ris.len() == n
            && self.ris_to_car.len() == n
            && self.car_to_ris.iter().chain(&self.ris_to_car).all(|v| v.len() == m);
        if !shapes_ok {
            return Err(Error::InvalidArgument("channel set has ragged shapes".into()));
        }
        let all = self.direct.iter().chain(&self.car_to_ris).chain(&self.ris_to_car).flatten();
        if all.clone().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("channel coefficients must be finite".into()));
        }
        Ok(())
    }

    /// CSV rows `kind,link,element,re,im`; `link` is `i-m` for direct paths
    /// and the car id for RIS paths. Floats use shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "link", "element", "re", "im"])?;
        let n = self.car_count();
        for i in 0..n {
            for m in 0..n {
                if i != m {
                    let c = self.direct[i][m];
                    w.write_record(["direct", &format!("{i}-{m}"), "0", &c.re.to_string(), &c.im.to_string()])?;
                }
            }
        }
        for (kind, table) in [("car_to_ris", &self.car_to_ris), ("ris_to_car", &self.ris_to_car)] {
            for (i, v) in table.iter().enumerate() {
                for (k, c) in v.iter().enumerate() {
                    w.write_record([kind, &i.to_string(), &k.to_string(), &c.re.to_string(), &c.im.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut direct = BTreeMap::new();
        let mut ris: [BTreeMap<(usize, usize), Complex64>; 2] = Default::default();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = idx + 2;
            let err = |msg: &str| Error::Parse { line, msg: msg.to_string() };
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            let idxp = |s: &str| s.parse::<usize>().map_err(|_| err("bad index"));
            if rec.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let c = Complex64::new(num(&rec[3])?, num(&rec[4])?);
            match &rec[0] {
                "direct" => {
                    let (a, b) = rec[1].split_once('-').ok_or_else(|| err("bad direct link id"))?;
                    direct.insert((idxp(a)?, idxp(b)?), c);
                }
                "car_to_ris" => {
                    ris[0].insert((idxp(&rec[1])?, idxp(&rec[2])?), c);
                }
                "ris_to_car" => {
                    ris[1].insert((idxp(&rec[1])?, idxp(&rec[2])?), c);
                }
                _ => return Err(err("unknown channel kind")),
            }
        }
        let n = ris[0].keys().map(|k| k.0 + 1).max().unwrap_or(0);
        let m = ris[0].keys().map(|k| k.1 + 1).max().unwrap_or(0);
        let mut set = ChannelSet {
            direct: vec![vec![Complex64::new(0.0, 0.0); n]; n],
            car_to_ris: vec![vec![Complex64::new(f64::NAN, 0.0); m]; n],
            ris_to_car: vec![vec![Complex64::new(f64::NAN, 0.0); m]; n],
        };
        for ((i, j), c) in direct {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument("direct link id out of range".into()));
            }
            set.direct[i][j] = c;
        }
        for (table, entries) in [&mut set.car_to_ris, &mut set.ris_to_car].into_iter().zip(ris) {
            for ((i, k), c) in entries {
                if i >= n || k >= m {
                    return Err(Error::InvalidArgument("RIS entry out of range".into()));
                }
                table[i][k] = c;
            }
        }
        set.validate()?;
        Ok(set)
    }
}

fn rician(rng: &mut ChaCha8Rng, k: f64, los_phase: f64) -> Complex64 {
    let los = if k.is_finite() { (k / (k + 1.0)).sqrt() } else { 1.0 };
    let nlos = if k.is_finite() { (1.0 / (k + 1.0)).sqrt() } else { 0.0 };
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let scatter = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    Complex64::from_polar(los, los_phase) + scatter * nlos
}

/// Draws one realization. Each coefficient is `sqrt(path_gain)·fading`;
/// unobstructed links fade Rician with the configured factor and obstructed
/// ones Rayleigh with the NLoS exponent. Direct channels are reciprocal.
pub fn sample_channels(geom: &Geometry, params: &ChannelParams, seed: u64) -> Result<ChannelSet> {
    geom.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geom.car_count();
    let phase_of = |d: f64| 2.0 * PI * (d / params.wavelength_m).fract();
    let link = |a: Point, b: Point, what: &str| -> Result<(f64, f64)> {
        let d = geom.checked_distance(a, b, what)?;
        let obstructed = geom.blocked(a, b);
        let k = if obstructed { 0.0 } else { params.rice_factor };
        Ok((params.path_gain(d, obstructed).sqrt(), k))
    };
    let mut direct = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (geom.car_positions[i], geom.car_positions[j]);
            let (amp, k) = link(a, b, &format!("link {i}-{j}"))?;
            let h = rician(&mut rng, k, phase_of(distance(a, b))) * amp;
            direct[i][j] = h;
            direct[j][i] = h;
        }
    }
    let elements = geom.element_positions();
    let ris_table = |rng: &mut ChaCha8Rng| -> Result<Vec<Vec<Complex64>>> {
        let mut table = Vec::with_capacity(n);
        for (i, &car) in geom.car_positions.iter().enumerate() {
            let (amp, k) = link(car, geom.ris_position, &format!("car {i}-RIS"))?;
            table.push(elements.iter().map(|&e| rician(rng, k, phase_of(distance(car, e))) * amp).collect());
        }
        Ok(table)
    };
    let car_to_ris = ris_table(&mut rng)?;
    let ris_to_car = ris_table(&mut rng)?;
    Ok(ChannelSet { direct, car_to_ris, ris_to_car })
}

/// Diagonal of the RIS reflection matrix; every entry has modulus 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseShiftVector(Vec<Complex64>);

impl PhaseShiftVector {
    /// All elements at phase 0.
    pub fn identity(m: usize) -> Self {
        Self(vec![Complex64::new(1.0, 0.0); m])
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        Self(angles.iter().map(|&a| Complex64::from_polar(1.0, a)).collect())
    }

    /// Scales each entry to modulus 1 keeping its phase; zero maps to `1 + 0j`.
    pub fn project(raw: &[Complex64]) -> Self {
        Self(raw.iter().map(|&c| project_unit(c)).collect())
    }

    /// Wraps coefficients that must already be unit-modulus.
    pub fn try_new(coeffs: Vec<Complex64>) -> Result<Self> {
        if let Some((k, c)) = coeffs.iter().enumerate().find(|(_, c)| (c.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::InvalidArgument(format!("coefficient {k} has modulus {}", c.norm())));
        }
        Ok(Self(coeffs))
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_unit_modulus(&self) -> bool {
        self.0.iter().all(|c| (c.norm() - 1.0).abs() <= UNIT_TOL)
    }
}

fn project_unit(c: Complex64) -> Complex64 {
    let r = c.norm();
    if r == 0.0 || !r.is_finite() {
        Complex64::new(1.0, 0.0)
    } else {
        c / r
    }
}

/// Reflected-path contribution `Σ_k conj(h_{RIS,m}[k]) φ_k h_{i,RIS}[k]` for raw coefficients.
pub fn cascade_gain(ch: &ChannelSet, coeffs: &[Complex64], tx: usize, rx: usize) -> Complex64 {
    ch.ris_to_car[rx]
        .iter()
        .zip(coeffs)
        .zip(&ch.car_to_ris[tx])
        .map(|((r, p), t)| r.conj() * p * t)
        .sum()
}

/// `h_{i,m} + h_{RIS,m}^H φ h_{i,RIS}` for transmitter `tx` and receiver `rx`.
pub fn effective_gain(ch: &ChannelSet, phi: &PhaseShiftVector, tx: usize, rx: usize) -> Complex64 {
    ch.direct[tx][rx] + cascade_gain(ch, phi.coefficients(), tx, rx)
}

/// Shannon rate for a given complex gain.
pub fn rate_for_gain(gain: Complex64, params: &ChannelParams) -> f64 {
    let snr = params.tx_power_w() * gain.norm_sqr() / params.noise_power_w();
    params.bandwidth_hz * (1.0 + snr).log2()
}

/// Achievable rate in bits/s on `tx → rx`.
pub fn link_rate(ch: &ChannelSet, phi: &PhaseShiftVector, tx: usize, rx: usize, params: &ChannelParams) -> f64 {
    rate_for_gain(effective_gain(ch, phi, tx, rx), params)
}

/// Phases and the leftover amplitude `|h + cascade|` on the link they target.
#[derive(Clone, Debug, PartialEq)]
pub struct Deconstruction {
    pub phases: PhaseShiftVector,
    pub residual: f64,
}

/// Closed-form cancelling phase for a single-element surface,
/// `φ = −h_{i,m} / (h_{RIS,m}^* h_{i,RIS})`, projected to modulus 1.
pub fn deconstructive_phase(ch: &ChannelSet, tx: usize, rx: usize) -> Result<Deconstruction> {
    if ch.ris_elements() != 1 {
        return Err(Error::InvalidArgument(format!(
            "closed-form cancellation needs exactly one element, got {}",
            ch.ris_elements()
        )));
    }
    let h = ch.direct[tx][rx];
    let cascade = ch.ris_to_car[rx][0].conj() * ch.car_to_ris[tx][0];
    if cascade.norm() == 0.0 {
        return Err(Error::DegenerateChannel("no reflected path to cancel with".into()));
    }
    if h.norm() == 0.0 {
        return Err(Error::DegenerateChannel("direct path is zero; nothing to cancel".into()));
    }
    let phases = PhaseShiftVector::project(&[-h / cascade]);
    let residual = effective_gain(ch, &phases, tx, rx).norm();
    Ok(Deconstruction { phases, residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectControl {
    pub phases: PhaseShiftVector,
    /// `|h + cascade|` for every deconstructed link, in plan order.
    pub residuals: Vec<((usize, usize), f64)>,
}

/// Element-wise cancellation of the first deconstructed link.
///
/// Every usable element takes an equal share of the direct path,
/// `X_k = −h / (M'·J_k·B_k)`, then is scaled to modulus 1. Elements with a
/// zero reflected product are left at phase 0. Constructed links are ignored.
pub fn direct_control(ch: &ChannelSet, plan: &LinkPlan) -> Result<DirectControl> {
    let m = ch.ris_elements();
    let Some(&(tx, rx)) = plan.deconstruct.iter().next() else {
        return Ok(DirectControl { phases: PhaseShiftVector::identity(m), residuals: Vec::new() });
    };
    let h = ch.direct[tx][rx];
    let products: Vec<Complex64> =
        (0..m).map(|k| ch.ris_to_car[rx][k].conj() * ch.car_to_ris[tx][k]).collect();
    let usable = products.iter().filter(|p| p.norm() > 0.0).count();
    if usable == 0 {
        return Err(Error::DegenerateChannel("every reflected product is zero".into()));
    }
    let raw: Vec<Complex64> = products
        .iter()
        .map(|&p| if p.norm() > 0.0 { -h / (p * usable as f64) } else { Complex64::new(1.0, 0.0) })
        .collect();
    let phases = PhaseShiftVector::project(&raw);
    let residuals = plan
        .deconstruct
        .iter()
        .map(|&(a, b)| ((a, b), effective_gain(ch, &phases, a, b).norm()))
        .collect();
    Ok(DirectControl { phases, residuals })
}

/// Ready-made geometries.
pub mod presets {
    use super::{Geometry, Obstruction};

    /// Eight cars on two streets meeting at the corner of one building, with
    /// the RIS mounted just outside that corner. Cars 0, 5 and 6 sit on the
    /// northern street west of the corner, cars 1 and 2 on the eastern street
    /// south of it, so links 0-2, 1-5 and 2-6 have no line of sight.
    pub fn platoon(ris_elements: usize) -> Geometry {
        Geometry {
            car_positions: vec![
                [-90.0, 14.0, 1.5],
                [14.0, -25.0, 1.5],
                [14.0, -15.0, 1.5],
                [14.0, 20.0, 1.5],
                [0.0, 14.0, 1.5],
                [-45.0, 14.0, 1.5],
                [-30.0, 14.0, 1.5],
                [14.0, 5.0, 1.5],
            ],
            ris_position: [11.0, 11.0, 8.0],
            obstructions: vec![Obstruction { min: [-10.0, -10.0, 0.0], max: [10.0, 10.0, 20.0] }],
            ris_elements,
            element_spacing_m: 0.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Two cars, `m` elements, every channel set to the given values.
    fn toy(m: usize, direct: Complex64, to_ris: Complex64, from_ris: Complex64) -> ChannelSet {
        ChannelSet {
            direct: vec![vec![c(0.0, 0.0), direct], vec![direct, c(0.0, 0.0)]],
            car_to_ris: vec![vec![to_ris; m]; 2],
            ris_to_car: vec![vec![from_ris; m]; 2],
        }
    }

    fn small_geometry() -> Geometry {
        Geometry {
            car_positions: vec![[0.0, 0.0, 10.0], [100.0, 0.0, 10.0], [0.0, 100.0, 10.0]],
            ris_position: [50.0, 50.0, 20.0],
            obstructions: vec![Obstruction { min: [40.0, -5.0, 0.0], max: [60.0, 5.0, 30.0] }],
            ris_elements: 4,
            element_spacing_m: 0.05,
        }
    }

    #[test]
    fn gain_examples() {
        let ch = toy(1, c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        let g = effective_gain(&ch, &PhaseShiftVector::from_angles(&[PI]), 0, 1);
        assert!(g.norm() < 1e-15);

        let ch = toy(2, c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        let g = effective_gain(&ch, &PhaseShiftVector::identity(2), 0, 1);
        assert_eq!(g, c(2.0, 0.0));
    }

    #[test]
    fn gain_conjugates_the_receive_side() {
        let ch = toy(1, c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
        // conj(j) · 1 · 1 = −j
        assert_eq!(effective_gain(&ch, &PhaseShiftVector::identity(1), 0, 1), c(0.0, -1.0));
    }

    #[test]
    fn rate_examples() {
        let params = ChannelParams::default();
        // gain giving SNR exactly 1
        let g = (params.noise_power_w() / params.tx_power_w()).sqrt();
        let r = rate_for_gain(c(g, 0.0), &params);
        assert!((r - 3e6).abs() < 1e-6);
        assert_eq!(rate_for_gain(c(0.0, 0.0), &params), 0.0);
    }

    #[test]
    fn closed_form_cancellation() {
        let d = deconstructive_phase(&toy(1, c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)), 0, 1).unwrap();
        assert!((d.phases.coefficients()[0] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(d.residual < 1e-12);

        let d = deconstructive_phase(&toy(1, c(0.5, 0.0), c(1.0, 0.0), c(1.0, 0.0)), 0, 1).unwrap();
        assert!((d.phases.coefficients()[0] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!((d.residual - 0.5).abs() < 1e-15);

        assert!(deconstructive_phase(&toy(1, c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)), 0, 1).is_err());
        assert!(deconstructive_phase(&toy(1, c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)), 0, 1).is_err());
        assert!(deconstructive_phase(&toy(2, c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)), 0, 1).is_err());
    }

    #[test]
    fn direct_control_examples() {
        let plan = LinkPlan::new(&[], &[(0, 1)]);
        let out = direct_control(&toy(1, c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)), &plan).unwrap();
        assert!((out.phases.coefficients()[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(out.residuals[0].1 < 1e-15);

        // unconstrained 0.5 per element, projected to 1: overshoots by one
        let out = direct_control(&toy(2, c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)), &plan).unwrap();
        assert!(out.phases.is_unit_modulus());
        assert!((out.residuals[0].1 - 1.0).abs() < 1e-15);

        assert!(direct_control(&toy(2, c(-1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)), &plan).is_err());
    }

    #[test]
    fn direct_control_skips_dead_elements() {
        let mut ch = toy(3, c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        ch.car_to_ris[0][2] = c(0.0, 0.0);
        let out = direct_control(&ch, &LinkPlan::new(&[], &[(0, 1)])).unwrap();
        assert_eq!(out.phases.coefficients()[2], c(1.0, 0.0));
        assert!((out.residuals[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_rules() {
        let p = PhaseShiftVector::project(&[c(2.0, 0.0), c(0.0, 3.0), c(0.0, 0.0)]);
        assert_eq!(p.coefficients(), &[c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(PhaseShiftVector::try_new(vec![c(0.5, 0.0)]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = small_geometry();
        let p = ChannelParams::default();
        assert_eq!(sample_channels(&g, &p, 7).unwrap(), sample_channels(&g, &p, 7).unwrap());
        assert_ne!(sample_channels(&g, &p, 7).unwrap(), sample_channels(&g, &p, 8).unwrap());
    }

    #[test]
    fn huge_rice_factor_is_deterministic_magnitude() {
        let geom = Geometry {
            car_positions: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            ris_position: [0.0, 1.0, 0.0],
            obstructions: vec![],
            ris_elements: 1,
            element_spacing_m: 0.05,
        };
        // 1 m links with no reference loss: path gain 1
        let params = ChannelParams { rice_factor: 1e6, ref_loss_db: 0.0, ..ChannelParams::default() };
        for seed in 0..50 {
            let ch = sample_channels(&geom, &params, seed).unwrap();
            assert!((ch.direct[0][1].norm() - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn coincident_positions_rejected() {
        let mut g = small_geometry();
        g.car_positions[1] = g.car_positions[0];
        assert!(sample_channels(&g, &ChannelParams::default(), 0).is_err());
    }

    #[test]
    fn platoon_blocks_the_plan_links() {
        let g = presets::platoon(16);
        let p = &g.car_positions;
        for (a, b) in [(0, 2), (1, 5), (2, 6)] {
            assert!(g.blocked(p[a], p[b]), "{a}-{b}");
        }
        assert!(p.iter().all(|&c| !g.blocked(c, g.ris_position)));
    }

    #[test]
    fn obstruction_slab_test() {
        let geom = small_geometry();
        assert!(geom.blocked([0.0, 0.0, 10.0], [100.0, 0.0, 10.0]));
        assert!(!geom.blocked([0.0, 0.0, 10.0], [0.0, 100.0, 10.0]));
        assert!(!geom.blocked([0.0, 0.0, 40.0], [100.0, 0.0, 40.0]));
    }

    #[test]
    fn gain_matches_naive_sum() {
        let mut geom = small_geometry();
        geom.ris_elements = 9;
        let ch = sample_channels(&geom, &ChannelParams::default(), 11).unwrap();
        let phi = PhaseShiftVector::from_angles(&(0..9).map(|k| 0.7 * k as f64).collect::<Vec<_>>());
        for (tx, rx) in [(0, 1), (1, 2), (2, 0)] {
            let mut naive = ch.direct[tx][rx];
            for k in 0..9 {
                naive += ch.ris_to_car[rx][k].conj() * phi.coefficients()[k] * ch.car_to_ris[tx][k];
            }
            assert!((effective_gain(&ch, &phi, tx, rx) - naive).norm() <= 1e-12 * naive.norm().max(1e-30));
        }
    }

    #[test]
    fn rate_monotone_in_gain() {
        let params = ChannelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let g = c(rng.random::<f64>() * 1e-4, rng.random::<f64>() * 1e-4);
            assert!(rate_for_gain(g * 2f64.sqrt(), &params) > rate_for_gain(g, &params));
        }
    }

    #[test]
    fn mean_power_follows_path_loss() {
        let params = ChannelParams::default();
        let wall = Obstruction { min: [40.0, -5.0, -5.0], max: [60.0, 5.0, 5.0] };
        let mut geom = Geometry {
            car_positions: vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]],
            ris_position: [50.0, 50.0, 0.0],
            obstructions: vec![],
            ris_elements: 1,
            element_spacing_m: 0.05,
        };
        let seeds = 10_000u64;
        let mean = |geom: &Geometry| {
            (0..seeds).map(|s| sample_channels(geom, &params, s).unwrap().direct[0][1].norm_sqr()).sum::<f64>()
                / seeds as f64
        };
        let clear = mean(&geom);
        geom.obstructions.push(wall);
        let blocked = mean(&geom);
        for (got, want) in [(clear, params.path_gain(100.0, false)), (blocked, params.path_gain(100.0, true))] {
            assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
        }
        let ratio = clear / blocked;
        let want = 10f64.powf((4.0 - 1.5) * 10.0 * 100f64.log10() / 10.0);
        assert!((ratio / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ch = sample_channels(&small_geometry(), &ChannelParams::default(), 3).unwrap();
        let mut buf = Vec::new();
        ch.write_csv(&mut buf).unwrap();
        let back = ChannelSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ch);
    }
}
