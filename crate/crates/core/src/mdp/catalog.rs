//! Built-in environments, addressable by name.

use crate::error::{Error, Result};
use crate::mdp::{Encoding, Env, MdpBuilder, MdpSpec};

pub const DISCOUNT: f64 = 0.99;

/// Names accepted by [`make_env`] besides `file:<path>`.
pub const ENV_NAMES: &[&str] = &["chain", "cliff", "cliff-xy", "stochastic-grid"];

const CLIFF_SIZE: (usize, usize) = (8, 5);

/// Builds a registered environment. `file:<path>` loads a TOML [`MdpSpec`].
pub fn make_env(name: &str) -> Result<Env> {
    match name {
        "chain" => Env::new(name, chain(5, DISCOUNT)?),
        "cliff" => Env::new(name, cliff_grid(CLIFF_SIZE.0, CLIFF_SIZE.1, DISCOUNT)?),
        "cliff-xy" => {
            let (w, h) = CLIFF_SIZE;
            Env::new(name, cliff_grid(w, h, DISCOUNT)?)?.with_encoding(coordinate_features(w, h))
        }
        "stochastic-grid" => Env::new(name, stochastic_grid(5, 5, 0.1, DISCOUNT)?),
        _ => match name.strip_prefix("file:") {
            Some(path) => Env::new(name, MdpSpec::load(path)?),
            None => Err(Error::Config(format!(
                "unknown environment '{name}' (known: {})",
                ENV_NAMES.join(", ")
            ))),
        },
    }
}

/// `length` positions followed by an absorbing goal. Action 0 steps back
/// (staying put at position 0), action 1 steps forward; stepping forward
/// from the last position pays 1 and ends the episode.
pub fn chain(length: usize, discount: f64) -> Result<MdpSpec> {
    if length == 0 {
        return Err(Error::arg("chain length must be positive"));
    }
    let mut b = MdpBuilder::new(length + 1, 2, discount);
    for s in 0..length {
        b = b.add(s, 0, s.saturating_sub(1), 1.0, 0.0);
        let r = if s + 1 == length { 1.0 } else { 0.0 };
        b = b.add(s, 1, s + 1, 1.0, r);
    }
    b.terminal(length).build()
}

/// Grid moves: up, right, down, left.
pub const GRID_ACTIONS: usize = 4;

fn grid_move(width: usize, height: usize, cell: usize, action: usize) -> usize {
    let (x, y) = (cell % width, cell / width);
    let (nx, ny) = match action {
        0 => (x, y.saturating_sub(1)),
        1 => ((x + 1).min(width - 1), y),
        2 => (x, (y + 1).min(height - 1)),
        _ => (x.saturating_sub(1), y),
    };
    ny * width + nx
}

/// Per-cell `(x, y)` position scaled to `[0, 1]`, row-major like the grids.
pub fn coordinate_features(width: usize, height: usize) -> Encoding {
    let scale = |v: usize, n: usize| {
        if n > 1 {
            v as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    Encoding::Features(
        (0..width * height)
            .map(|c| vec![scale(c % width, width), scale(c / width, height)])
            .collect(),
    )
}

/// Cliff walk on a `width × height` grid (row 0 at the top). The episode
/// starts in the bottom-left corner and the goal is the bottom-right corner
/// (+1). The bottom-row cells in between are a penalty region: entering one
/// pays -1 and ends the episode. Walls are sticky.
pub fn cliff_grid(width: usize, height: usize, discount: f64) -> Result<MdpSpec> {
    if width < 3 || height < 2 {
        return Err(Error::arg("cliff grid needs width >= 3 and height >= 2"));
    }
    let n = width * height;
    let bottom = (height - 1) * width;
    let start = bottom;
    let goal = bottom + width - 1;
    let is_cliff = |c: usize| c > bottom && c < goal;
    let mut b = MdpBuilder::new(n, GRID_ACTIONS, discount);
    for cell in 0..n {
        if cell == goal || is_cliff(cell) {
            continue;
        }
        for a in 0..GRID_ACTIONS {
            let next = grid_move(width, height, cell, a);
            let r = if next == goal {
                1.0
            } else if is_cliff(next) {
                -1.0
            } else {
                0.0
            };
            b = b.add(cell, a, next, 1.0, r);
        }
    }
    b = b.terminal(goal);
    for c in bottom + 1..goal {
        b = b.terminal(c);
    }
    let mut init = vec![0.0; n];
    init[start] = 1.0;
    b.initial(init).build()
}

/// Open grid with slippery moves: the intended move happens with
/// probability `1 - 2·slip`, otherwise one of the two perpendicular moves.
/// Start top-left, goal bottom-right (+1), and a pit (-1, terminal) in the
/// centre cell.
pub fn stochastic_grid(width: usize, height: usize, slip: f64, discount: f64) -> Result<MdpSpec> {
    if width < 3 || height < 3 {
        return Err(Error::arg("stochastic grid needs at least 3x3 cells"));
    }
    if !(0.0..0.5).contains(&slip) {
        return Err(Error::arg("slip must lie in [0, 0.5)"));
    }
    let n = width * height;
    let goal = n - 1;
    let pit = (height / 2) * width + width / 2;
    let mut b = MdpBuilder::new(n, GRID_ACTIONS, discount);
    for cell in 0..n {
        if cell == goal || cell == pit {
            continue;
        }
        for a in 0..GRID_ACTIONS {
            let moves = [
                (a, 1.0 - 2.0 * slip),
                ((a + 1) % GRID_ACTIONS, slip),
                ((a + 3) % GRID_ACTIONS, slip),
            ];
            for (dir, p) in moves {
                if p == 0.0 {
                    continue;
                }
                let next = grid_move(width, height, cell, dir);
                let r = if next == goal {
                    1.0
                } else if next == pit {
                    -1.0
                } else {
                    0.0
                };
                b = b.add(cell, a, next, p, r);
            }
        }
    }
    b.terminal(goal).terminal(pit).build()
}
