//! The three tabular experiment environments and their concept banks.

use drs_core::concepts::ConceptBank;
use drs_core::mdp::{State, TabularMdp};
use drs_core::rng;
use drs_core::Result;
use rand::Rng;

/// Four states on a loop, actions {left, stay, right}; states are stored
/// 0-based, so the rewarded positions 1 and 3 (1-based) are 0 and 2 here.
/// Reward 1 in those states under every action, discount 0.9, uniform
/// starts. The bank holds the even-position and third-position indicators
/// plus `distractors` seeded random bit patterns.
pub fn build_loop4(distractors: usize) -> Result<(TabularMdp, ConceptBank)> {
    let n = 4;
    let mu = vec![0.25; n];
    let mut rewards = vec![vec![0.0; 3]; n];
    rewards[0] = vec![1.0; 3];
    rewards[2] = vec![1.0; 3];
    let mut transitions = vec![vec![vec![0.0; n]; 3]; n];
    for s in 0..n {
        transitions[s][0][(s + n - 1) % n] = 1.0;
        transitions[s][1][s] = 1.0;
        transitions[s][2][(s + 1) % n] = 1.0;
    }
    let mdp = TabularMdp::new(0.9, mu, rewards, transitions, vec![])?;

    let mut labels = vec!["even_position".to_string(), "third_position".to_string()];
    // 1-based positions: even = {2, 4}, divisible by three = {3}.
    let mut matrix = vec![vec![0, 1, 0, 1], vec![0, 0, 1, 0]];
    let mut r = rng::seeded(0x0d15);
    for i in 0..distractors {
        labels.push(format!("distractor_{i}"));
        matrix.push((0..n).map(|_| r.gen_range(0..2u8)).collect());
    }
    let bank = ConceptBank::new(labels, matrix)?;
    Ok((mdp, bank))
}

/// Compass directions used by the grid environments.
const DX: [isize; 4] = [1, 0, -1, 0];
const DY: [isize; 4] = [0, 1, 0, -1];
const DIR_NAMES: [&str; 4] = ["east", "south", "west", "north"];

/// Key-door gridworld. A vertical wall at `x = width / 2` splits the grid,
/// pierced by a door at `y = height / 2`. The key sits at (0, 0), the goal
/// at (width - 1, height / 2). The agent state is (cell, facing direction,
/// has-key, door-open); actions are {turn-left, turn-right, forward, use}.
/// `use` picks up the key when standing on it and opens the door when
/// facing it with the key. Stepping onto the goal pays 1 and terminates.
/// Starts are uniform over left-room cells and directions; discount 0.95.
///
/// The bank holds, in order: `width - 1` x-thresholds, `height - 1`
/// y-thresholds, 4 direction one-hots, has-key, door-open, and 4
/// blocked-neighbor indicators.
pub struct KeydoorLayout {
    pub width: usize,
    pub height: usize,
    pub wall_x: usize,
    pub door_y: usize,
    pub key_cell: (usize, usize),
    pub goal_cell: (usize, usize),
}

impl KeydoorLayout {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(drs_core::Error::InvalidArgument(
                "keydoor needs width and height of at least 3".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            wall_x: width / 2,
            door_y: height / 2,
            key_cell: (0, 0),
            goal_cell: (width - 1, height / 2),
        })
    }

    /// Cells an agent can ever stand on: everything except wall cells
    /// (the door gap is a standable cell).
    fn standable(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && (x != self.wall_x || y == self.door_y)
    }

    /// Whether (x, y) blocks movement in the given flag state. Out of
    /// bounds and wall cells always block; the door cell blocks until open.
    fn blocked(&self, x: isize, y: isize, door_open: bool) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return true;
        }
        let (x, y) = (x as usize, y as usize);
        if x == self.wall_x && y != self.door_y {
            return true;
        }
        x == self.wall_x && y == self.door_y && !door_open
    }
}

struct KeydoorIndex {
    layout: KeydoorLayout,
    cells: Vec<(usize, usize)>,
    cell_id: Vec<Vec<Option<usize>>>,
}

impl KeydoorIndex {
    fn new(layout: KeydoorLayout) -> Self {
        let mut cells = Vec::new();
        let mut cell_id = vec![vec![None; layout.height]; layout.width];
        for y in 0..layout.height {
            for x in 0..layout.width {
                if layout.standable(x, y) {
                    cell_id[x][y] = Some(cells.len());
                    cells.push((x, y));
                }
            }
        }
        Self { layout, cells, cell_id }
    }

    fn n_states(&self) -> usize {
        self.cells.len() * 16
    }

    fn state(&self, x: usize, y: usize, dir: usize, key: bool, door: bool) -> State {
        let c = self.cell_id[x][y].expect("standable cell");
        ((c * 4 + dir) * 2 + usize::from(key)) * 2 + usize::from(door)
    }

    fn unpack(&self, s: State) -> (usize, usize, usize, bool, bool) {
        let door = s % 2 == 1;
        let key = (s / 2) % 2 == 1;
        let dir = (s / 4) % 4;
        let (x, y) = self.cells[s / 16];
        (x, y, dir, key, door)
    }
}

pub fn build_keydoor(width: usize, height: usize) -> Result<(TabularMdp, ConceptBank)> {
    let idx = KeydoorIndex::new(KeydoorLayout::new(width, height)?);
    let lay = &idx.layout;
    let n = idx.n_states();
    let n_actions = 4;
    let mut rewards = vec![vec![0.0; n_actions]; n];
    let mut transitions = vec![vec![vec![0.0; n]; n_actions]; n];
    let mut terminals = Vec::new();
    let mut mu = vec![0.0; n];

    for s in 0..n {
        let (x, y, dir, key, door) = idx.unpack(s);
        if (x, y) == lay.goal_cell {
            terminals.push(s);
            for row in &mut transitions[s] {
                row[s] = 1.0;
            }
            continue;
        }
        for a in 0..n_actions {
            let (nx, ny, ndir, nkey, ndoor) = match a {
                0 => (x, y, (dir + 3) % 4, key, door),
                1 => (x, y, (dir + 1) % 4, key, door),
                2 => {
                    let tx = x as isize + DX[dir];
                    let ty = y as isize + DY[dir];
                    if lay.blocked(tx, ty, door) {
                        (x, y, dir, key, door)
                    } else {
                        (tx as usize, ty as usize, dir, key, door)
                    }
                }
                _ => {
                    if (x, y) == lay.key_cell && !key {
                        (x, y, dir, true, door)
                    } else {
                        let fx = x as isize + DX[dir];
                        let fy = y as isize + DY[dir];
                        let faces_door = fx == lay.wall_x as isize && fy == lay.door_y as isize;
                        if faces_door && key && !door {
                            (x, y, dir, key, true)
                        } else {
                            (x, y, dir, key, door)
                        }
                    }
                }
            };
            let t = idx.state(nx, ny, ndir, nkey, ndoor);
            transitions[s][a][t] = 1.0;
            if (nx, ny) == lay.goal_cell {
                rewards[s][a] = 1.0;
            }
        }
    }

    for x in 0..lay.wall_x {
        for y in 0..lay.height {
            for dir in 0..4 {
                mu[idx.state(x, y, dir, false, false)] = 1.0;
            }
        }
    }
    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|w| *w /= total);

    let mdp = TabularMdp::new(0.95, mu, rewards, transitions, terminals)?;

    let mut labels = Vec::new();
    let mut matrix: Vec<Vec<u8>> = Vec::new();
    let mut push = |label: String, bit: &dyn Fn(State) -> bool| {
        labels.push(label);
        matrix.push((0..n).map(|s| u8::from(bit(s))).collect());
    };
    for t in 1..lay.width {
        push(format!("x_ge_{t}"), &|s| idx.unpack(s).0 >= t);
    }
    for t in 1..lay.height {
        push(format!("y_ge_{t}"), &|s| idx.unpack(s).1 >= t);
    }
    for (d, name) in DIR_NAMES.iter().enumerate() {
        push(format!("dir_{name}"), &|s| idx.unpack(s).2 == d);
    }
    push("has_key".to_string(), &|s| idx.unpack(s).3);
    push("door_open".to_string(), &|s| idx.unpack(s).4);
    for (d, name) in DIR_NAMES.iter().enumerate() {
        push(format!("blocked_{name}"), &|s| {
            let (x, y, _, _, door) = idx.unpack(s);
            lay.blocked(x as isize + DX[d], y as isize + DY[d], door)
        });
    }
    let bank = ConceptBank::new(labels, matrix)?;
    Ok((mdp, bank))
}

/// Line of `n` states, actions {left, right}. Moves succeed with
/// probability 0.8 and otherwise stay (walking off an end always stays).
/// Reward 1 inside the middle band `[n/4, 3n/4)`, discount 0.9, uniform
/// starts. The bank is one threshold concept `s >= t` per interior boundary
/// `t = 1..n`, so the full bank separates every pair of states.
pub fn build_chain(n: usize) -> Result<(TabularMdp, ConceptBank)> {
    if n < 4 {
        return Err(drs_core::Error::InvalidArgument("chain needs at least 4 states".into()));
    }
    let mu = vec![1.0 / n as f64; n];
    let band = |s: usize| s >= n / 4 && s < (3 * n) / 4;
    let rewards: Vec<Vec<f64>> =
        (0..n).map(|s| vec![if band(s) { 1.0 } else { 0.0 }; 2]).collect();
    let mut transitions = vec![vec![vec![0.0; n]; 2]; n];
    for s in 0..n {
        for (a, step) in [(0usize, -1isize), (1usize, 1isize)] {
            let target = s as isize + step;
            if target < 0 || target as usize >= n {
                transitions[s][a][s] = 1.0;
            } else {
                transitions[s][a][target as usize] = 0.8;
                transitions[s][a][s] = 0.2;
            }
        }
    }
    let mdp = TabularMdp::new(0.9, mu, rewards, transitions, vec![])?;
    let labels = (1..n).map(|t| format!("s_ge_{t}")).collect();
    let matrix = (1..n).map(|t| (0..n).map(|s| u8::from(s >= t)).collect()).collect();
    let bank = ConceptBank::new(labels, matrix)?;
    Ok((mdp, bank))
}
