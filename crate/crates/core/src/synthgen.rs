//! Seeded generator for SPI and AOI tables with the production line's
//! structure: layout, pin counts, the inspection cascade, and an optional
//! planted link between solder-volume deviation and defects.
//!
//! Every panel draws from its own ChaCha stream selected by panel id, so the
//! output does not depend on how panels are scheduled across threads.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AoiRecord, BoardLayout, OperatorLabel, PinKey, PinRecord, RepairLabel, SolderMeasurements,
};

/// Measurement columns that cannot go negative; draws are clamped at zero.
const NONNEGATIVE: [bool; 12] = [
    true, true, true, false, false, true, true, true, true, true, true, true,
];

/// Days covered by the generated production run.
const PRODUCTION_DAYS: i64 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_panels: u32,
    /// Stop after this many boards; the last panel may be partially filled.
    pub board_limit: Option<u64>,
    pub layout: BoardLayout,
    pub pin_defect_rate: f64,
    pub operator_bad_rate: f64,
    pub not_repairable_rate: f64,
    /// SPI result tokens assigned to out-of-tolerance pins.
    pub spi_result_defect_mix: Vec<(String, f64)>,
    /// The SPI station flags a pin whose standardized volume deviation falls
    /// below minus this value (insufficient paste).
    pub spi_flag_zscore: f64,
    pub aoi_fault_mix: Vec<(String, f64)>,
    pub planted_signal_strength: f64,
    pub missing_pin_number_rate: f64,
    pub feature_means: [f64; 12],
    pub feature_stddevs: [f64; 12],
    pub start_date: NaiveDate,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            num_panels: 200,
            board_limit: None,
            layout: BoardLayout::default_board(),
            pin_defect_rate: 0.004,
            operator_bad_rate: 0.040,
            not_repairable_rate: 0.805,
            spi_result_defect_mix: vec![
                ("W.Insufficient".into(), 0.98),
                ("E.shape".into(), 0.008),
                ("E.Position".into(), 0.008),
                ("W.Excessive".into(), 0.004),
            ],
            spi_flag_zscore: 2.5,
            aoi_fault_mix: ["LeanSoldering", "Translated", "Misaligned", "Other"]
                .iter()
                .map(|t| (t.to_string(), 0.25))
                .collect(),
            planted_signal_strength: 0.0,
            missing_pin_number_rate: 0.05,
            feature_means: [
                100.0, 150.0, 100.0, 0.0, 0.0, 250.0, 250.0, 9.0e6, 6.0e4, 10.0, 80.0, 60.0,
            ],
            feature_stddevs: [5.0, 10.0, 5.0, 5.0, 5.0, 8.0, 8.0, 6.0e5, 3.0e3, 2.0, 40.0, 30.0],
            start_date: NaiveDate::from_ymd_opt(2020, 1, 13).expect("valid date"),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_panels == 0 {
            return Err(Error::Config("num_panels must be positive".into()));
        }
        if self.board_limit == Some(0) {
            return Err(Error::Config("board_limit must be positive".into()));
        }
        for (name, p) in [
            ("pin_defect_rate", self.pin_defect_rate),
            ("operator_bad_rate", self.operator_bad_rate),
            ("not_repairable_rate", self.not_repairable_rate),
            ("missing_pin_number_rate", self.missing_pin_number_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, mix) in [
            ("spi_result_defect_mix", &self.spi_result_defect_mix),
            ("aoi_fault_mix", &self.aoi_fault_mix),
        ] {
            check_mix(name, mix)?;
        }
        if !(self.planted_signal_strength >= 0.0 && self.planted_signal_strength.is_finite()) {
            return Err(Error::Config(
                "planted_signal_strength must be finite and nonnegative".into(),
            ));
        }
        if !self.spi_flag_zscore.is_finite() || self.spi_flag_zscore < 0.0 {
            return Err(Error::Config("spi_flag_zscore must be nonnegative".into()));
        }
        for (m, s) in self.feature_means.iter().zip(&self.feature_stddevs) {
            if !m.is_finite() || !s.is_finite() || *s < 0.0 {
                return Err(Error::Config(
                    "feature means must be finite and stddevs nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Boards that [`generate`] will emit.
    pub fn board_count(&self) -> u64 {
        let full = u64::from(self.num_panels) * u64::from(self.layout.figures_per_panel());
        self.board_limit.map_or(full, |limit| limit.min(full))
    }

    pub fn pin_count(&self) -> u64 {
        self.board_count() * self.layout.total_pins()
    }
}

fn check_mix(name: &str, mix: &[(String, f64)]) -> Result<()> {
    if mix.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    if mix.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(format!("{name} has a weight outside [0, 1]")));
    }
    let total: f64 = mix.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expected defect rate over z ~ N(0, 1) for a given intercept, by composite
/// Simpson quadrature of the (even) integrand on [0, 12].
fn expected_defect_rate(intercept: f64, strength: f64) -> f64 {
    const STEPS: usize = 24_000;
    const UPPER: f64 = 12.0;
    let h = UPPER / STEPS as f64;
    let norm = (2.0 / std::f64::consts::PI).sqrt();
    let f = |z: f64| norm * (-0.5 * z * z).exp() * sigmoid(intercept + strength * z * z);
    let mut acc = f(0.0) + f(UPPER);
    for i in 1..STEPS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// Logistic intercept that makes the marginal defect rate equal
/// `pin_defect_rate` under the planted link `logit p = b + strength * z^2`.
pub fn calibrate_signal(config: &GeneratorConfig) -> Result<f64> {
    let p = config.pin_defect_rate;
    let s = config.planted_signal_strength;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("pin_defect_rate = {p} is not a probability")));
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    if s == 0.0 {
        return Ok((p / (1.0 - p)).ln());
    }
    let (mut lo, mut hi) = (-2000.0_f64, 2000.0_f64);
    if expected_defect_rate(lo, s) > p || expected_defect_rate(hi, s) < p {
        return Err(Error::Calibration(format!(
            "defect rate {p} is not bracketed for strength {s}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rate = expected_defect_rate(mid, s);
        if (rate - p).abs() <= 1e-12 {
            return Ok(mid);
        }
        if rate < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let err = (expected_defect_rate(b, s) - p).abs();
    if err <= 1e-4 {
        Ok(b)
    } else {
        Err(Error::Calibration(format!(
            "no intercept within 1e-4 of rate {p} after 200 bisection steps (residual {err:e})"
        )))
    }
}

/// Rounds to six significant digits, the precision of the CSV exports.
fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let k = 5 - exp;
    if k >= 0 {
        let d = 10f64.powi(k);
        (x * d).round() / d
    } else {
        let d = 10f64.powi(-k);
        (x / d).round() * d
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, mix: &'a [(String, f64)]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (token, p) in mix {
        acc += p;
        if u < acc {
            return token;
        }
    }
    // Rounding slack at the top of the distribution.
    mix.iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map_or(mix[0].0.as_str(), |(t, _)| t.as_str())
}

struct PanelContext<'a> {
    config: &'a GeneratorConfig,
    intercept: f64,
    start: NaiveDateTime,
    seconds_per_panel: f64,
}

fn generate_panel(ctx: &PanelContext<'_>, panel_id: u32) -> (Vec<PinRecord>, Vec<AoiRecord>) {
    let cfg = ctx.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::from(panel_id));

    let fpp = cfg.layout.figures_per_panel();
    let first_board = u64::from(panel_id - 1) * u64::from(fpp);
    let figures = (cfg.board_count().saturating_sub(first_board)).min(u64::from(fpp)) as u32;
    let total_pins = cfg.layout.total_pins() as u32;

    let mut pins = Vec::with_capacity(figures as usize * total_pins as usize);
    let mut aoi = Vec::new();
    let panel_offset = (f64::from(panel_id - 1) * ctx.seconds_per_panel) as i64;
    let (mean_v, sd_v) = (cfg.feature_means[0], cfg.feature_stddevs[0]);

    for figure_id in 1..=figures {
        let stamp = ctx.start + Duration::seconds(panel_offset + i64::from(figure_id - 1) * 4);
        let mut ordinal = (figure_id - 1) * total_pins;
        for (component_id, pin_count) in cfg.layout.components() {
            let pad_type = u8::from(*pin_count > 2);
            for pin_number in 1..=*pin_count {
                ordinal += 1;
                let mut raw = [0.0; 12];
                for (c, slot) in raw.iter_mut().enumerate() {
                    let n: f64 = rng.sample(StandardNormal);
                    *slot = cfg.feature_means[c] + cfg.feature_stddevs[c] * n;
                }
                let z = if sd_v > 0.0 { (raw[0] - mean_v) / sd_v } else { 0.0 };
                let p_defect = if cfg.planted_signal_strength == 0.0 {
                    cfg.pin_defect_rate
                } else {
                    sigmoid(ctx.intercept + cfg.planted_signal_strength * z * z)
                };
                let defective = rng.random::<f64>() < p_defect;
                let spi_result = if z < -cfg.spi_flag_zscore {
                    pick(&mut rng, &cfg.spi_result_defect_mix).to_string()
                } else {
                    "Good".to_string()
                };
                let mut values = [0.0; 12];
                for c in 0..12 {
                    let v = if NONNEGATIVE[c] { raw[c].max(0.0) } else { raw[c] };
                    values[c] = round_sig6(v);
                }
                let key = PinKey {
                    panel_id,
                    figure_id,
                    component_id: component_id.clone(),
                    pin_number,
                };
                if defective {
                    let machine_label = pick(&mut rng, &cfg.aoi_fault_mix).to_string();
                    let bad = rng.random::<f64>() < cfg.operator_bad_rate;
                    let repair_label = if bad {
                        Some(if rng.random::<f64>() < cfg.not_repairable_rate {
                            RepairLabel::NotPossibleToRepair
                        } else {
                            RepairLabel::FalseScrap
                        })
                    } else {
                        None
                    };
                    let blank = rng.random::<f64>() < cfg.missing_pin_number_rate;
                    aoi.push(AoiRecord {
                        panel_id,
                        figure_id,
                        component_id: component_id.clone(),
                        pin_number: (!blank).then_some(pin_number),
                        machine_label,
                        operator_label: if bad {
                            OperatorLabel::Bad
                        } else {
                            OperatorLabel::Good
                        },
                        repair_label,
                    });
                }
                pins.push(PinRecord {
                    key,
                    date: stamp.date(),
                    time: stamp.time(),
                    pad_id: ordinal,
                    pad_type,
                    measurements: SolderMeasurements::from_array(values),
                    spi_result,
                });
            }
        }
    }
    (pins, aoi)
}

/// Generates SPI pin records and AOI defect records.
pub fn generate(config: &GeneratorConfig) -> Result<(Vec<PinRecord>, Vec<AoiRecord>)> {
    config.validate()?;
    let intercept = if config.planted_signal_strength > 0.0 {
        calibrate_signal(config)?
    } else {
        0.0
    };
    let ctx = PanelContext {
        config,
        intercept,
        start: config.start_date.and_hms_opt(6, 0, 0).expect("valid time"),
        seconds_per_panel: (PRODUCTION_DAYS * 86_400) as f64 / f64::from(config.num_panels),
    };
    let fpp = u64::from(config.layout.figures_per_panel());
    let panels = config.board_count().div_ceil(fpp) as u32;
    let parts: Vec<_> = (1..=panels)
        .into_par_iter()
        .map(|panel_id| generate_panel(&ctx, panel_id))
        .collect();
    let mut pins = Vec::with_capacity(config.pin_count() as usize);
    let mut aoi = Vec::new();
    for (p, a) in parts {
        pins.extend(p);
        aoi.extend(a);
    }
    Ok((pins, aoi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(num_panels: u32) -> GeneratorConfig {
        GeneratorConfig {
            num_panels,
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    /// Monte-Carlo defect rate of the planted link, independent of the quadrature.
    fn monte_carlo_rate(intercept: f64, strength: f64, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..draws {
            let z: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            if u < sigmoid(intercept + strength * z * z) {
                hits += 1;
            }
        }
        hits as f64 / draws as f64
    }

    #[test]
    fn record_count_is_panels_times_boards_times_pins() {
        let (pins, _) = generate(&small(3)).unwrap();
        assert_eq!(pins.len(), 3 * 8 * 389);
        let cfg = GeneratorConfig {
            board_limit: Some(19),
            ..small(3)
        };
        assert_eq!(generate(&cfg).unwrap().0.len(), 19 * 389);
        assert_eq!(cfg.pin_count(), 19 * 389);
    }

    #[test]
    fn rejects_empty_configs() {
        assert!(generate(&small(0)).is_err());
        let bad_mix = GeneratorConfig {
            aoi_fault_mix: vec![("a".into(), 0.5), ("b".into(), 0.4)],
            ..small(1)
        };
        assert!(matches!(generate(&bad_mix), Err(Error::Config(_))));
        let bad_rate = GeneratorConfig {
            operator_bad_rate: 1.5,
            ..small(1)
        };
        assert!(generate(&bad_rate).is_err());
        assert!(BoardLayout::new(vec![], 8).is_err());
    }

    #[test]
    fn zero_defect_rate_yields_no_aoi_records() {
        let cfg = GeneratorConfig {
            pin_defect_rate: 0.0,
            ..small(2)
        };
        assert!(generate(&cfg).unwrap().1.is_empty());
        let planted = GeneratorConfig {
            planted_signal_strength: 2.0,
            ..cfg
        };
        assert!(generate(&planted).unwrap().1.is_empty());
    }

    #[test]
    fn identical_configs_give_identical_streams() {
        let cfg = GeneratorConfig {
            planted_signal_strength: 1.0,
            ..small(4)
        };
        let a = generate(&cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| generate(&cfg).unwrap());
        assert_eq!(a, b);
        let other = generate(&GeneratorConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn cascade_is_consistent() {
        let cfg = GeneratorConfig {
            pin_defect_rate: 0.05,
            operator_bad_rate: 0.3,
            missing_pin_number_rate: 0.2,
            ..small(3)
        };
        let (pins, aoi) = generate(&cfg).unwrap();
        let pin_keys: HashSet<_> = pins.iter().map(|p| p.key.clone()).collect();
        let comp_keys: HashSet<_> = pins.iter().map(|p| p.key.component()).collect();
        assert!(!aoi.is_empty());
        for a in &aoi {
            a.validate().unwrap();
            assert!(comp_keys.contains(&a.component()));
            if let Some(k) = a.pin() {
                assert!(pin_keys.contains(&k));
            }
            assert_eq!(a.repair_label.is_some(), a.operator_label == OperatorLabel::Bad);
        }
        for p in &pins {
            p.validate().unwrap();
        }
    }

    #[test]
    fn values_carry_six_significant_digits() {
        assert_eq!(round_sig6(101.234_567), 101.235);
        assert_eq!(round_sig6(9_123_456.7), 9_123_460.0);
        assert_eq!(round_sig6(-0.001_234_567_8), -0.001_234_57);
        let (pins, _) = generate(&small(1)).unwrap();
        for v in pins[0].measurements.to_array() {
            assert_eq!(v.to_string().parse::<f64>().unwrap(), v);
            assert_eq!(round_sig6(v), v);
        }
    }

    #[test]
    fn zero_strength_intercept_is_logit() {
        let cfg = GeneratorConfig {
            pin_defect_rate: 0.01,
            ..GeneratorConfig::default()
        };
        let b = calibrate_signal(&cfg).unwrap();
        assert!((b - (0.01f64 / 0.99).ln()).abs() < 1e-12);
        // The quadrature agrees with the closed form at zero strength.
        assert!((expected_defect_rate(b, 0.0) - 0.01).abs() < 1e-10);
    }

    #[test]
    fn calibrated_intercept_hits_rate_by_monte_carlo() {
        for (p, lo, hi) in [(0.01, 0.009, 0.011), (0.5, 0.495, 0.505)] {
            let cfg = GeneratorConfig {
                pin_defect_rate: p,
                planted_signal_strength: 2.0,
                ..GeneratorConfig::default()
            };
            let b = calibrate_signal(&cfg).unwrap();
            assert!((expected_defect_rate(b, 2.0) - p).abs() <= 1e-4);
            let rate = monte_carlo_rate(b, 2.0, 1_000_000, 99);
            assert!((lo..=hi).contains(&rate), "p={p} b={b} rate={rate}");
        }
    }

    #[test]
    fn calibration_reports_unbracketed_rates() {
        let cfg = GeneratorConfig {
            pin_defect_rate: 0.01,
            planted_signal_strength: 1e6,
            ..GeneratorConfig::default()
        };
        assert!(matches!(calibrate_signal(&cfg), Err(Error::Calibration(_))));
    }

    fn binomial_ok(hits: usize, n: usize, p: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (hits as f64 - n as f64 * p).abs() <= 3.0 * sd
    }

    #[test]
    fn marginal_rates_follow_configuration() {
        // 40 panels = 124,480 pins.
        for strength in [0.0, 2.0] {
            let cfg = GeneratorConfig {
                planted_signal_strength: strength,
                pin_defect_rate: 0.01,
                operator_bad_rate: 0.2,
                ..small(40)
            };
            let (pins, aoi) = generate(&cfg).unwrap();
            assert!(pins.len() >= 100_000);
            assert!(binomial_ok(aoi.len(), pins.len(), 0.01), "{}", aoi.len());
            let bad = aoi
                .iter()
                .filter(|a| a.operator_label == OperatorLabel::Bad)
                .count();
            assert!(binomial_ok(bad, aoi.len(), 0.2));
            let npr = aoi
                .iter()
                .filter(|a| a.repair_label == Some(RepairLabel::NotPossibleToRepair))
                .count();
            assert!(binomial_ok(npr, bad, 0.805));
        }
    }

    #[test]
    fn planted_signal_concentrates_defects_in_volume_tails() {
        let cfg = GeneratorConfig {
            planted_signal_strength: 2.0,
            pin_defect_rate: 0.01,
            missing_pin_number_rate: 0.0,
            ..small(40)
        };
        let (pins, aoi) = generate(&cfg).unwrap();
        let defective: HashSet<_> = aoi.iter().filter_map(AoiRecord::pin).collect();
        let mut dev: Vec<(f64, bool)> = pins
            .iter()
            .map(|p| {
                (
                    (p.measurements.volume_pct - 100.0).abs(),
                    defective.contains(&p.key),
                )
            })
            .collect();
        dev.sort_by(|a, b| a.0.total_cmp(&b.0));
        let decile = dev.len() / 10;
        let rate = |s: &[(f64, bool)]| s.iter().filter(|d| d.1).count() as f64 / s.len() as f64;
        let bottom = rate(&dev[..decile]);
        let top = rate(&dev[dev.len() - decile..]);
        assert!(top > bottom, "top {top} bottom {bottom}");
    }

    #[test]
    fn spi_flags_mark_insufficient_paste() {
        let (pins, _) = generate(&small(2)).unwrap();
        for p in &pins {
            let z = (p.measurements.volume_pct - 100.0) / 5.0;
            if z > -2.49 {
                assert_eq!(p.spi_result, "Good");
            }
            if z < -2.51 {
                assert_ne!(p.spi_result, "Good");
            }
        }
        assert!(pins.iter().any(|p| p.spi_result == "W.Insufficient"));
    }
}
