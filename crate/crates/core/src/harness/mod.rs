//! Scenario files, parameter sweeps, verification suites and CSV output.
//!
//! A scenario is a JSON document:
//!
//! ```json
//! {
//!   "name": "example",
//!   "mode": "game",
//!   "capacity": 1.0,
//!   "utilization": {"kind": "linear"},
//!   "cps": [
//!     {"id": "video", "v": 1.0, "alpha": 5.0, "beta": 2.0},
//!     {"id": "web", "v": 0.5,
//!      "demand": {"kind": "tabulated", "x": [0, 1, 2], "y": [1, 0.4, 0.1]},
//!      "throughput": {"kind": "exponential", "rate": 2.0}}
//!   ],
//!   "p_grid": {"start": 0.0, "stop": 2.0, "points": 201},
//!   "q_levels": [0, 0.5, 1.0, 1.5, 2.0],
//!   "seed": 0,
//!   "output_dir": "out"
//! }
//! ```
//!
//! Only `capacity` and `cps` are required. `mode` is `game` or `one-sided`;
//! one-sided scenarios sweep `q = 0` only. `p_grid` may also be a plain list.

pub mod scenario;
pub mod sweep;
pub mod table;
pub mod verify;

pub use scenario::{builtin, linspace, load_scenario, parse_scenario, Mode, Scenario, BUILTIN_NAMES};
pub use sweep::{solve_point, sweep, PointStatus, SweepRecord};
pub use table::{emit_csv, format_number, write_csv};
pub use verify::{verify, Check, Suite, VerificationReport};
