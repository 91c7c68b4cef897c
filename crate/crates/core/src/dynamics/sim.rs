use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::solver::{relative_residual, CscMatrix, SparseLu};
use super::system::{assemble_system, SimParams, SystemLayout};
use crate::error::{Error, Result};
use crate::material::MaterialField;
use crate::mesh::{MeshAssets, MeshTopology, RestState};

/// Positions (m) and velocities (m/s) after `t` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub t: usize,
}

impl SimState {
    /// Flat sample at rest: the drop configuration of the drape test.
    pub fn at_rest(rest: &RestState) -> Self {
        Self {
            x: rest.positions.clone(),
            v: vec![[0.0; 3]; rest.positions.len()],
            t: 0,
        }
    }
}

/// One recorded step: the state it started from and its linear system.
#[derive(Clone, Debug)]
pub struct TapeRecord {
    pub x: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    /// Stored values of `A` over the layout's pattern.
    pub a_values: Vec<f64>,
    pub b: Vec<f64>,
    /// Velocity increment solved from `A dv = b`.
    pub dv: Vec<f64>,
}

/// Forward record sufficient for an exact reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct SimTape {
    pub records: Vec<TapeRecord>,
}

impl SimTape {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-step diagnostics, written to the step log.
#[derive(Clone, Debug, Serialize)]
pub struct StepInfo {
    pub step: usize,
    pub max_velocity: f64,
    pub residual: f64,
    pub seconds: f64,
}

/// Implicit-Euler integrator for one mesh.
///
/// The system layout and symbolic factorization are built once and shared
/// by every simulation run on the mesh.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub topology: Arc<MeshTopology>,
    pub rest: Arc<RestState>,
    pub layout: Arc<SystemLayout>,
    pub params: SimParams,
}

impl Simulator {
    pub fn new(assets: &MeshAssets, params: SimParams) -> Result<Self> {
        if !(params.h > 0.0 && params.h.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", params.h)));
        }
        if !(params.handle_stiffness >= 0.0 && params.damping >= 0.0) {
            return Err(Error::invalid("handle stiffness and damping must be non-negative"));
        }
        Ok(Self {
            topology: Arc::new(assets.topology.clone()),
            rest: Arc::new(assets.rest.clone()),
            layout: Arc::new(SystemLayout::new(&assets.topology)?),
            params,
        })
    }

    pub fn initial_state(&self) -> SimState {
        SimState::at_rest(&self.rest)
    }

    pub fn matrix(&self, values: Vec<f64>) -> CscMatrix {
        CscMatrix {
            pattern: self.layout.pattern.clone(),
            values,
        }
    }

    /// Advances one step: `v' = v + dv` with `A dv = b`, then `x' = x + h v'`.
    pub fn step(
        &self,
        state: &SimState,
        material: &MaterialField,
        tape: Option<&mut SimTape>,
    ) -> Result<(SimState, StepInfo)> {
        let start = Instant::now();
        let wrap = |e: Error| Error::Step {
            step: state.t,
            source: Box::new(e),
        };
        let sys = assemble_system(&self.layout, &self.topology, &self.rest, material, &self.params, &state.x, &state.v)
            .map_err(wrap)?;
        let dv = SparseLu::new(&sys.a).solve(&sys.b).map_err(wrap)?;
        let residual = relative_residual(&sys.a, &dv, &sys.b);
        let h = self.params.h;
        let mut next = SimState {
            x: state.x.clone(),
            v: state.v.clone(),
            t: state.t + 1,
        };
        let mut vmax: f64 = 0.0;
        for i in 0..next.x.len() {
            for c in 0..3 {
                next.v[i][c] += dv[3 * i + c];
                next.x[i][c] += h * next.v[i][c];
            }
            let s = next.v[i].iter().map(|u| u * u).sum::<f64>().sqrt();
            vmax = vmax.max(s);
        }
        if !vmax.is_finite() {
            return Err(wrap(Error::Solver {
                residual,
                condition: f64::INFINITY,
            }));
        }
        if let Some(tape) = tape {
            tape.records.push(TapeRecord {
                x: state.x.clone(),
                v: state.v.clone(),
                a_values: sys.a.values,
                b: sys.b,
                dv,
            });
        }
        let info = StepInfo {
            step: state.t,
            max_velocity: vmax,
            residual,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok((next, info))
    }

    /// Runs `params.steps` steps from `s0`, optionally recording a tape.
    pub fn simulate(&self, s0: &SimState, material: &MaterialField, record: bool) -> Result<SimRun> {
        let mut tape = record.then(SimTape::default);
        let mut state = s0.clone();
        let mut log = Vec::with_capacity(self.params.steps);
        for _ in 0..self.params.steps {
            let (next, info) = self.step(&state, material, tape.as_mut())?;
            log::trace!("step {} |v|max {:.3e} residual {:.2e}", info.step, info.max_velocity, info.residual);
            state = next;
            log.push(info);
        }
        Ok(SimRun {
            state,
            tape,
            log,
        })
    }
}

/// Result of [`Simulator::simulate`].
#[derive(Clone, Debug)]
pub struct SimRun {
    pub state: SimState,
    pub tape: Option<SimTape>,
    pub log: Vec<StepInfo>,
}
