use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use codesign::boundary::{decode_talents, fit_surface, BoundaryConfig, UnitTalentSample};
use codesign::morphology::{MorphologyBounds, MorphologyVector, PhysicsCoefficients, TalentVector};
use codesign::pareto::{nsga2_run, GaConfig};
use codesign::sim::{generate_scenario, speed_km_per_min, EnvConfig, Outcome, ScriptedPolicy};

#[derive(Serialize)]
pub struct DesignView {
    pub talents: TalentVector,
    pub constraints: [f64; 3],
    pub feasible: bool,
}

#[derive(Serialize)]
pub struct BoundsView {
    pub names: [&'static str; 7],
    pub lower: [f64; 7],
    pub upper: [f64; 7],
}

pub fn bounds_json() -> String {
    let b = MorphologyBounds::default();
    serde_json::to_string(&BoundsView {
        names: [
            "arm_length",
            "arm_width",
            "motor_power",
            "battery_capacity",
            "battery_mass_fraction",
            "propeller_diameter",
            "payload_mass_budget",
        ],
        lower: b.lower.to_array(),
        upper: b.upper.to_array(),
    })
    .expect("plain data")
}

/// Talents and constraint values of a design given as 7 numbers.
pub fn design(values: &[f64]) -> Result<String, String> {
    let x = MorphologyVector::from_slice(values).map_err(|e| e.to_string())?;
    let p = PhysicsCoefficients::default();
    let talents = p.talents(&x).map_err(|e| e.to_string())?;
    let constraints = p.constraints(&x).map_err(|e| e.to_string())?;
    let view = DesignView {
        talents,
        constraints,
        feasible: constraints.iter().all(|c| *c <= 0.0),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct FrontView {
    pub points: Vec<[f64; 3]>,
    /// Decoded talents on a unit grid; rows of (range, speed, capacity).
    pub surface: Vec<[f64; 3]>,
    pub grid: usize,
    pub r_squared: f64,
}

/// Small NSGA-II search and boundary fit.
pub fn front(population: usize, generations: usize, seed: u64) -> Result<String, String> {
    let config = GaConfig {
        population_size: population,
        generations,
        runs: 1,
        seed,
        ..Default::default()
    };
    let archive =
        nsga2_run(&config, &MorphologyBounds::default(), &PhysicsCoefficients::default()).map_err(|e| e.to_string())?;
    let model = fit_surface(&archive, &BoundaryConfig::default()).map_err(|e| e.to_string())?;
    let grid = 11;
    let mut surface = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let u = UnitTalentSample::new(vec![i as f64 / (grid - 1) as f64, j as f64 / (grid - 1) as f64])
                .map_err(|e| e.to_string())?;
            surface.push(decode_talents(&u, &model).to_array());
        }
    }
    serde_json::to_string(&FrontView {
        points: archive.talent_rows(),
        surface,
        grid,
        r_squared: model.diagnostics.surface_r_squared,
    })
    .map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct Leg {
    pub robot: usize,
    /// 0 is the depot, k is task k-1.
    pub action: usize,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub depart: f64,
    pub arrive: f64,
    pub outcome: String,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct MissionView {
    pub side_km: f64,
    pub depot: (f64, f64),
    pub tasks: Vec<(f64, f64, f64)>,
    pub legs: Vec<Leg>,
    pub completed: usize,
    pub n_tasks: usize,
    pub duration: f64,
}

/// One scripted mission with identical robots, as straight-line legs.
pub fn mission(n_tasks: usize, n_robots: usize, talents: [f64; 3], policy: &str, seed: u64) -> Result<String, String> {
    let env = EnvConfig::default().with_scale(n_tasks, n_robots);
    let scenario = generate_scenario(&env, seed).map_err(|e| e.to_string())?;
    let policy: ScriptedPolicy = policy.parse().map_err(|e: codesign::error::Error| e.to_string())?;
    let t = TalentVector::from_array(talents);
    if !t.is_valid() {
        return Err("talents must be finite and nonnegative".into());
    }
    let state = policy.play(&scenario, t, seed).map_err(|e| e.to_string())?;
    let speed = speed_km_per_min(t.nominal_speed);
    let mut pos = vec![scenario.graph.depot; n_robots];
    let mut legs = Vec::new();
    for ev in &state.log {
        if matches!(ev.outcome, Outcome::Retired | Outcome::Waited) {
            continue;
        }
        let to = scenario.graph.location(ev.action);
        let from = pos[ev.robot];
        let d = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
        legs.push(Leg {
            robot: ev.robot,
            action: ev.action,
            from,
            to,
            depart: ev.time,
            arrive: ev.time + if d > 0.0 { d / speed } else { 0.0 },
            outcome: ev.outcome.to_string(),
        });
        pos[ev.robot] = to;
    }
    serde_json::to_string(&MissionView {
        side_km: env.side_km(),
        depot: scenario.graph.depot,
        tasks: scenario.graph.tasks.iter().map(|k| (k.x, k.y, k.deadline)).collect(),
        legs,
        completed: state.completed(),
        n_tasks,
        duration: env.mission_duration,
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = defaultBounds)]
pub fn default_bounds() -> String {
    bounds_json()
}

#[wasm_bindgen(js_name = evaluateDesign)]
pub fn evaluate_design(values: &[f64]) -> Result<String, JsError> {
    design(values).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = paretoFront)]
pub fn pareto_front(population: usize, generations: usize, seed: u32) -> Result<String, JsError> {
    front(population, generations, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateMission)]
pub fn simulate_mission(
    n_tasks: usize,
    n_robots: usize,
    range: f64,
    speed: f64,
    capacity: f64,
    policy: &str,
    seed: u32,
) -> Result<String, JsError> {
    mission(n_tasks, n_robots, [range, speed, capacity], policy, seed as u64).map_err(|e| JsError::new(&e))
}
