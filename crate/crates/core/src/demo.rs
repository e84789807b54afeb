//! Closed-form demo simulators used by the bundled executables and tests.
//!
//! * lander: a four-legged lander touching down on honeycomb crush absorbers.
//! * granular: a column of granular material collapsing into a cone at the
//!   angle of repose, with a Cam-Clay admissibility check.
//! * branin: the Branin test function, for optimizer checks.
//!
//! The models are deliberately algebraic; they exercise the orchestrator,
//! they are not physics.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::protocol::{encode_message, parse_request, Metrics, SimMessage, SimRequest};
use crate::ParamConfig;

pub const LANDER_MASS: f64 = 300.0;
pub const TOUCHDOWN_SPEED: f64 = 2.0;
pub const LANDER_LEGS: f64 = 4.0;
pub const LUNAR_G: f64 = 1.62;

pub const COLUMN_RADIUS: f64 = 0.1;
pub const COLUMN_HEIGHT: f64 = 0.4;
pub const OUT_DIR_KEY: &str = "OUT_DIR";
pub const OUT_DIR_ENV: &str = "SIMFLOCK_OUT_DIR";
const PROFILE_SAMPLES: usize = 11;

fn real(cfg: &ParamConfig, name: &str) -> Result<f64, String> {
    let v = cfg.get(name).ok_or_else(|| format!("missing parameter `{name}`"))?;
    let x = v.as_f64().ok_or_else(|| format!("parameter `{name}` must be numeric"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("parameter `{name}` is not finite"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderParams {
    pub beta: f64,
    pub alpha2: f64,
    pub f_y: f64,
}

impl LanderParams {
    pub fn from_config(cfg: &ParamConfig) -> Result<Self, String> {
        Ok(LanderParams { beta: real(cfg, "beta")?, alpha2: real(cfg, "alpha2")?, f_y: real(cfg, "f_y")? })
    }

    /// Angles must lie in [0, π/2); zero is accepted as a limiting case.
    pub fn check(&self) -> Result<(), String> {
        for (name, a) in [("beta", self.beta), ("alpha2", self.alpha2)] {
            if !(0.0..FRAC_PI_2).contains(&a) {
                return Err(format!("{name} = {a} outside [0, pi/2)"));
            }
        }
        if !(self.f_y > 0.0) {
            return Err(format!("f_y = {} must be positive", self.f_y));
        }
        Ok(())
    }

    pub fn effective_force(&self) -> f64 {
        LANDER_LEGS * self.f_y * self.alpha2.cos() * self.beta.cos()
    }
}

/// Peak deceleration and absorbed energy. A force that cannot arrest the
/// descent (F ≤ m·g) yields `{peak_accel: g, energy_absorbed: 0}`.
pub fn lander_sim(p: &LanderParams) -> Result<Metrics, String> {
    p.check()?;
    let f = p.effective_force();
    let (peak, energy) = if f <= LANDER_MASS * LUNAR_G {
        (LUNAR_G, 0.0)
    } else {
        let peak = f / LANDER_MASS;
        let decel = peak - LUNAR_G;
        let stroke = TOUCHDOWN_SPEED * TOUCHDOWN_SPEED / (2.0 * decel);
        (peak, f * stroke)
    };
    Ok(Metrics::from([("peak_accel".to_owned(), peak), ("energy_absorbed".to_owned(), energy)]))
}

/// Synthetic checkpoints: `peak_accel · k / r` for k = 1..=r.
pub fn lander_reports(final_metrics: &Metrics, r: u32) -> Vec<SimMessage> {
    let peak = final_metrics["peak_accel"];
    (1..=r)
        .map(|k| SimMessage::Report {
            step: k,
            metrics: Metrics::from([("peak_accel".to_owned(), peak * f64::from(k) / f64::from(r))]),
        })
        .collect()
}

pub fn lander_handler(req: &SimRequest) -> Vec<SimMessage> {
    let metrics = match LanderParams::from_config(&req.config).and_then(|p| lander_sim(&p)) {
        Ok(m) => m,
        Err(detail) => return vec![SimMessage::Error { detail }],
    };
    let mut out = req.report_steps.map(|r| lander_reports(&metrics, r)).unwrap_or_default();
    out.push(SimMessage::Done { metrics });
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GranularParams {
    pub mu_s: f64,
    pub rho: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub e: f64,
    pub nu: f64,
}

impl GranularParams {
    pub fn from_config(cfg: &ParamConfig) -> Result<Self, String> {
        Ok(GranularParams {
            mu_s: real(cfg, "mu_s")?,
            rho: real(cfg, "rho")?,
            lambda: real(cfg, "lambda")?,
            kappa: real(cfg, "kappa")?,
            e: real(cfg, "E")?,
            nu: real(cfg, "nu")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GranularOutcome {
    Rejected(String),
    Settled { metrics: Metrics, snapshot: PathBuf },
}

pub fn column_volume() -> f64 {
    PI * COLUMN_RADIUS * COLUMN_RADIUS * COLUMN_HEIGHT
}

pub fn cone_volume(radius: f64, height: f64) -> f64 {
    PI * radius * radius * height / 3.0
}

/// Cone radius and height holding the column volume at slope atan(mu_s).
pub fn repose_cone(mu_s: f64) -> (f64, f64) {
    let tan = mu_s;
    let r = (3.0 * column_volume() / (PI * tan)).cbrt();
    (r, r * tan)
}

/// Collapses the column. `rho`, `E` and `nu` only appear in the snapshot header.
pub fn granular_sim(p: &GranularParams, trial_id: u64, out_dir: &Path) -> io::Result<GranularOutcome> {
    if p.kappa >= p.lambda {
        return Ok(GranularOutcome::Rejected("kappa >= lambda".into()));
    }
    if !(p.mu_s > 0.0) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("mu_s = {} must be positive", p.mu_s)));
    }
    let (r, h) = repose_cone(p.mu_s);
    let dir = out_dir.join(format!("trial_{trial_id}"));
    fs::create_dir_all(&dir)?;
    let path = dir.join("profile.csv");
    let mut f = io::BufWriter::new(fs::File::create(&path)?);
    writeln!(f, "# mu_s={} rho={} lambda={} kappa={} E={} nu={}", p.mu_s, p.rho, p.lambda, p.kappa, p.e, p.nu)?;
    writeln!(f, "radius,height")?;
    for k in 0..PROFILE_SAMPLES {
        let x = r * k as f64 / (PROFILE_SAMPLES - 1) as f64;
        writeln!(f, "{x},{}", h * (1.0 - x / r))?;
    }
    f.flush()?;
    let metrics = Metrics::from([("pile_radius".to_owned(), r), ("pile_height".to_owned(), h)]);
    Ok(GranularOutcome::Settled { metrics, snapshot: path })
}

/// Snapshot root: `OUT_DIR` in the config, else `$SIMFLOCK_OUT_DIR/snapshots`,
/// else `./snapshots`.
pub fn granular_out_dir(cfg: &ParamConfig) -> PathBuf {
    if let Some(dir) = cfg.get(OUT_DIR_KEY).and_then(|v| v.as_str()) {
        return PathBuf::from(dir);
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) => PathBuf::from(d).join("snapshots"),
        None => PathBuf::from("snapshots"),
    }
}

pub fn granular_handler(req: &SimRequest) -> Vec<SimMessage> {
    let p = match GranularParams::from_config(&req.config) {
        Ok(p) => p,
        Err(detail) => return vec![SimMessage::Error { detail }],
    };
    match granular_sim(&p, req.trial_id, &granular_out_dir(&req.config)) {
        Ok(GranularOutcome::Rejected(reason)) => vec![SimMessage::Rejected { reason }],
        Ok(GranularOutcome::Settled { metrics, .. }) => vec![SimMessage::Done { metrics }],
        Err(e) => vec![SimMessage::Error { detail: format!("snapshot: {e}") }],
    }
}

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;

pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let q = x2 - b * x1 * x1 + c * x1 - 6.0;
    q * q + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub fn branin_handler(req: &SimRequest) -> Vec<SimMessage> {
    match (real(&req.config, "x1"), real(&req.config, "x2")) {
        (Ok(x1), Ok(x2)) => {
            let v = branin(x1, x2);
            vec![SimMessage::Done { metrics: Metrics::from([("branin".to_owned(), v), ("neg_branin".to_owned(), -v)]) }]
        }
        (Err(detail), _) | (_, Err(detail)) => vec![SimMessage::Error { detail }],
    }
}

/// Reads one request line from stdin and writes the handler's messages to stdout.
pub fn serve_stdio(handler: impl FnOnce(&SimRequest) -> Vec<SimMessage>) -> ExitCode {
    let mut line = String::new();
    if let Err(e) = io::stdin().lock().read_line(&mut line) {
        eprintln!("reading request: {e}");
        return ExitCode::FAILURE;
    }
    let messages = match parse_request(&line) {
        Ok(req) => handler(&req),
        Err(e) => vec![SimMessage::Error { detail: format!("bad request: {e}") }],
    };
    let mut out = io::stdout().lock();
    for m in &messages {
        let encoded = match encode_message(m) {
            Ok(s) => s,
            Err(e) => encode_message(&SimMessage::Error { detail: e.to_string() }).unwrap(),
        };
        if out.write_all(encoded.as_bytes()).and_then(|_| out.flush()).is_err() {
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamValue;
    use proptest::prelude::*;

    fn lander(beta: f64, alpha2: f64, f_y: f64) -> Metrics {
        lander_sim(&LanderParams { beta, alpha2, f_y }).unwrap()
    }

    #[test]
    fn lander_hand_evaluation() {
        let m = lander(0.0, 0.0, 1000.0);
        assert!((m["peak_accel"] - 13.333_333_333_333_334).abs() < 1e-12);
        let a = 4000.0 / 300.0 - 1.62;
        let s: f64 = 4.0 / (2.0 * a);
        assert!((s - 0.170_746).abs() < 1e-5);
        assert!((m["energy_absorbed"] - 683.0).abs() < 0.05, "{}", m["energy_absorbed"]);
    }

    #[test]
    fn lander_non_arresting_sentinel() {
        let m = lander(0.0, 0.0, LANDER_MASS * LUNAR_G / 4.0);
        assert_eq!(m["peak_accel"], LUNAR_G);
        assert_eq!(m["energy_absorbed"], 0.0);
        let m = lander(1.5, 1.5, 1.0);
        assert_eq!(m["energy_absorbed"], 0.0);
    }

    #[test]
    fn lander_linear_in_yield_force() {
        let a = lander(0.3, 0.4, 2000.0)["peak_accel"];
        let b = lander(0.3, 0.4, 4000.0)["peak_accel"];
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn lander_rejects_bad_inputs() {
        assert!(lander_sim(&LanderParams { beta: FRAC_PI_2, alpha2: 0.1, f_y: 10.0 }).is_err());
        assert!(lander_sim(&LanderParams { beta: -0.1, alpha2: 0.1, f_y: 10.0 }).is_err());
        assert!(lander_sim(&LanderParams { beta: 0.1, alpha2: 0.1, f_y: 0.0 }).is_err());
        let req = SimRequest::new(0, ParamConfig::from([("beta".into(), ParamValue::Real(0.1))]), 0, None);
        assert!(matches!(lander_handler(&req)[..], [SimMessage::Error { .. }]));
    }

    #[test]
    fn lander_checkpoints() {
        let cfg: ParamConfig = [("beta", 0.2), ("alpha2", 0.3), ("f_y", 3000.0)].into_iter().map(|(k, v)| (k.into(), ParamValue::Real(v))).collect();
        let msgs = lander_handler(&SimRequest::new(0, cfg, 0, Some(4)));
        assert_eq!(msgs.len(), 5);
        let SimMessage::Done { metrics } = &msgs[4] else { panic!() };
        let SimMessage::Report { step: 2, metrics: half } = &msgs[1] else { panic!() };
        assert!((half["peak_accel"] - metrics["peak_accel"] / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn lander_energy_identity(beta in 0.0..1.5f64, alpha2 in 0.0..1.5f64, f_y in 1.0..20000.0f64) {
            let p = LanderParams { beta, alpha2, f_y };
            let f = p.effective_force();
            let m = lander_sim(&p).unwrap();
            if f > LANDER_MASS * LUNAR_G {
                let want = 0.5 * LANDER_MASS * TOUCHDOWN_SPEED * TOUCHDOWN_SPEED * f / (f - LANDER_MASS * LUNAR_G);
                prop_assert!((m["energy_absorbed"] - want).abs() <= 1e-9 * want);
            }
        }

        #[test]
        fn lander_monotone(beta in 0.01..1.5f64, alpha2 in 0.01..1.5f64, f_y in 2000.0..20000.0f64, d in 0.001..0.05f64) {
            let base = LanderParams { beta, alpha2, f_y };
            prop_assume!(base.effective_force() > LANDER_MASS * LUNAR_G * 1.5);
            let peak = |p: LanderParams| lander_sim(&p).unwrap()["peak_accel"];
            let stronger = LanderParams { f_y: f_y * (1.0 + d), ..base };
            let wider = LanderParams { beta: beta + d, ..base };
            let steeper = LanderParams { alpha2: alpha2 + d, ..base };
            let arrests = |p: &LanderParams| p.effective_force() > LANDER_MASS * LUNAR_G;
            prop_assert!(peak(stronger) > peak(base));
            if wider.beta < FRAC_PI_2 && arrests(&wider) {
                prop_assert!(peak(wider) < peak(base));
            }
            if steeper.alpha2 < FRAC_PI_2 && arrests(&steeper) {
                prop_assert!(peak(steeper) < peak(base));
            }
        }

        #[test]
        fn cone_conserves_volume(mu_s in 0.05..3.0f64) {
            let (r, h) = repose_cone(mu_s);
            prop_assert!((cone_volume(r, h) - column_volume()).abs() <= 1e-9 * column_volume());
        }
    }

    fn gp(mu_s: f64, lambda: f64, kappa: f64) -> GranularParams {
        GranularParams { mu_s, rho: 1600.0, lambda, kappa, e: 1e6, nu: 0.3 }
    }

    #[test]
    fn granular_rejects_inadmissible_without_files() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(granular_sim(&gp(0.8, 0.02, 0.03), 4, dir.path()).unwrap(), GranularOutcome::Rejected("kappa >= lambda".into()));
        assert_eq!(granular_sim(&gp(0.8, 0.02, 0.02), 5, dir.path()).unwrap(), GranularOutcome::Rejected("kappa >= lambda".into()));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn granular_unit_friction_symmetry_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let GranularOutcome::Settled { metrics, snapshot } = granular_sim(&gp(1.0, 0.05, 0.01), 7, dir.path()).unwrap() else { panic!() };
        let want = (3.0 * column_volume() / PI).cbrt();
        assert!((metrics["pile_radius"] - want).abs() < 1e-15);
        assert!((metrics["pile_height"] - want).abs() < 1e-15);
        assert_eq!(snapshot, dir.path().join("trial_7/profile.csv"));
        let text = fs::read_to_string(snapshot).unwrap();
        assert!(text.starts_with("# mu_s=1 rho=1600"));
        assert_eq!(text.lines().count(), 2 + PROFILE_SAMPLES);
    }

    #[test]
    fn granular_lower_friction_spreads_further() {
        assert!(repose_cone(0.4).0 > repose_cone(1.2).0);
    }

    #[test]
    fn branin_minima() {
        for (x1, x2) in [(-PI, 12.275), (PI, 2.275), (9.42478, 2.475)] {
            assert!((branin(x1, x2) - BRANIN_MIN).abs() < 1e-5);
        }
    }

    #[test]
    fn branin_grid_minimum() {
        // 1000 x 1000 grid over the standard domain.
        let mut best = f64::INFINITY;
        for i in 0..1000 {
            for j in 0..1000 {
                let x1 = -5.0 + 15.0 * i as f64 / 999.0;
                let x2 = 15.0 * j as f64 / 999.0;
                best = best.min(branin(x1, x2));
            }
        }
        assert!((best - 0.3979).abs() < 5e-4, "{best}");
    }
}
