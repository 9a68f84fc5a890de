//! Allelopathic Harvest: a grid of berry bushes shared by two preference
//! groups, half of each group moving only every other turn.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Blue => 1,
        }
    }

    pub fn other(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AhAction {
    Up,
    Down,
    Left,
    Right,
    Eat,
    ChangeColor,
    Plant,
    Ripen,
    Block,
    Noop,
}

impl AhAction {
    pub const COUNT: usize = 10;
    pub const ALL: [AhAction; 10] = [
        AhAction::Up,
        AhAction::Down,
        AhAction::Left,
        AhAction::Right,
        AhAction::Eat,
        AhAction::ChangeColor,
        AhAction::Plant,
        AhAction::Ripen,
        AhAction::Block,
        AhAction::Noop,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Validation(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_move(self) -> bool {
        matches!(self, AhAction::Up | AhAction::Down | AhAction::Left | AhAction::Right)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            AhAction::Up => (0, -1),
            AhAction::Down => (0, 1),
            AhAction::Left => (-1, 0),
            AhAction::Right => (1, 0),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AhRewards {
    pub eat_match: f64,
    pub eat_other: f64,
    pub ripen_match: f64,
    pub ripen_other: f64,
    /// Recolouring a bush that carried the opposing colour.
    pub change_from_opposing: f64,
    pub change_other: f64,
    pub plant: f64,
    pub block_opposing: f64,
    pub block_same: f64,
}

impl Default for AhRewards {
    fn default() -> Self {
        Self {
            eat_match: 2.0,
            eat_other: 1.0,
            ripen_match: 1.0,
            ripen_other: 0.5,
            change_from_opposing: 1.0,
            change_other: 0.25,
            plant: 0.5,
            block_opposing: 0.5,
            block_same: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AhConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub n_agents: usize,
    pub n_bushes: usize,
    /// Share of agents preferring red.
    pub red_fraction: f64,
    pub berry_regrowth_ts: u32,
    pub bush_lifespan_ts: u32,
    pub bush_growth_rate_ts: u32,
    pub episode_length_ts: usize,
    pub rewards: AhRewards,
}

impl Default for AhConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl AhConfig {
    pub fn baseline() -> Self {
        Self {
            grid_width: 15,
            grid_height: 15,
            n_agents: 40,
            n_bushes: 30,
            red_fraction: 0.5,
            berry_regrowth_ts: 3,
            bush_lifespan_ts: 120,
            bush_growth_rate_ts: 2,
            episode_length_ts: 3000,
            rewards: AhRewards::default(),
        }
    }

    pub fn desk() -> Self {
        Self { grid_width: 11, grid_height: 11, n_agents: 8, n_bushes: 16, episode_length_ts: 300, ..Self::baseline() }
    }

    pub fn cells(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_width == 0 || self.grid_height == 0 || self.n_agents == 0 {
            return Err(Error::Config("grid and population must be non-empty".into()));
        }
        if self.n_agents > self.cells() || self.n_bushes > self.cells() {
            return Err(Error::Config(format!(
                "{} agents and {} bushes do not fit a {}x{} grid",
                self.n_agents, self.n_bushes, self.grid_width, self.grid_height
            )));
        }
        if !(0.0..=1.0).contains(&self.red_fraction) {
            return Err(Error::Config("red_fraction must lie in [0, 1]".into()));
        }
        if self.bush_lifespan_ts == 0 || self.bush_growth_rate_ts == 0 || self.episode_length_ts == 0 {
            return Err(Error::Config("lifespan, growth rate and episode length must be positive".into()));
        }
        Ok(())
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bush {
    pub position: Cell,
    pub color: Color,
    pub has_ripe_berry: bool,
    pub regrowth_countdown: u32,
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhAgentState {
    pub position: Cell,
    pub preference: Color,
    /// Impaired mobility.
    pub z: bool,
    pub move_cooldown: u8,
    pub blocked_for_turn: bool,
}

/// What happened to one agent's action during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Blocked,
    Moved,
    Stayed,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub rewards: Vec<f64>,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AhState {
    cfg: AhConfig,
    pub agents: Vec<AhAgentState>,
    /// Row-major grid of bushes.
    bushes: Vec<Option<Bush>>,
    pub t: usize,
    rng: ChaCha8Rng,
}

/// Population layout and initial world for `seed`.
pub fn ah_reset(cfg: &AhConfig, seed: u64) -> Result<AhState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Cell> = (0..cfg.grid_height)
        .flat_map(|y| (0..cfg.grid_width).map(move |x| (x, y)))
        .collect();
    cells.shuffle(&mut rng);
    let n_red = (cfg.n_agents as f64 * cfg.red_fraction).round() as usize;
    let agents = (0..cfg.n_agents)
        .map(|id| {
            let (preference, k) = if id < n_red { (Color::Red, id) } else { (Color::Blue, id - n_red) };
            AhAgentState {
                position: cells[id],
                preference,
                z: k % 2 == 1,
                move_cooldown: 0,
                blocked_for_turn: false,
            }
        })
        .collect();
    cells.shuffle(&mut rng);
    let mut bushes = vec![None; cfg.cells()];
    let n_red_bushes = cfg.n_bushes.div_ceil(2);
    for (k, &pos) in cells.iter().take(cfg.n_bushes).enumerate() {
        let color = if k < n_red_bushes { Color::Red } else { Color::Blue };
        bushes[pos.1 * cfg.grid_width + pos.0] = Some(Bush {
            position: pos,
            color,
            has_ripe_berry: true,
            regrowth_countdown: 0,
            // staggered so the initial stand does not die out at once
            age: rng.gen_range(0..cfg.bush_lifespan_ts),
        });
    }
    Ok(AhState { cfg: cfg.clone(), agents, bushes, t: 0, rng })
}

/// Two worlds sharing every random draw, differing only in each agent's `z`.
pub fn ah_counterfactual_pair(cfg: &AhConfig, seed: u64) -> Result<(AhState, AhState)> {
    let factual = ah_reset(cfg, seed)?;
    let counterfactual = factual.flipped();
    Ok((factual, counterfactual))
}

/// Observation window side.
pub const WINDOW: usize = 5;
const CELL_FEATURES: usize = 5;
pub const OBS_DIM: usize = WINDOW * WINDOW * CELL_FEATURES + 5;

impl AhState {
    pub fn config(&self) -> &AhConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.episode_length_ts
    }

    /// Same world with every agent's sensitive attribute flipped.
    pub fn flipped(&self) -> AhState {
        let mut s = self.clone();
        for a in &mut s.agents {
            a.z = !a.z;
            a.move_cooldown = 0;
        }
        s
    }

    pub fn profiles(&self) -> Vec<AgentProfile> {
        self.agents
            .iter()
            .enumerate()
            .map(|(id, a)| AgentProfile { id, z: a.z, lf: a.preference.index(), action_count: AhAction::COUNT })
            .collect()
    }

    fn idx(&self, c: Cell) -> usize {
        c.1 * self.cfg.grid_width + c.0
    }

    pub fn bush_at(&self, c: Cell) -> Option<&Bush> {
        self.bushes.get(self.idx(c)).and_then(Option::as_ref)
    }

    pub fn bushes(&self) -> impl Iterator<Item = &Bush> {
        self.bushes.iter().flatten()
    }

    /// (red, blue) bush counts.
    pub fn census(&self) -> (usize, usize) {
        self.bushes().fold((0, 0), |(r, b), bush| match bush.color {
            Color::Red => (r + 1, b),
            Color::Blue => (r, b + 1),
        })
    }

    fn offset(&self, c: Cell, dx: isize, dy: isize) -> Option<Cell> {
        let x = c.0 as isize + dx;
        let y = c.1 as isize + dy;
        if x < 0 || y < 0 || x >= self.cfg.grid_width as isize || y >= self.cfg.grid_height as isize {
            None
        } else {
            Some((x as usize, y as usize))
        }
    }

    /// Egocentric 5x5 window (out-of-bounds, red bush, blue bush, ripe
    /// berry, other agent per cell) followed by own preference, own `z`,
    /// own cooldown and the two bush counts over the cell count.
    pub fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        let me = self.agents.get(agent).ok_or(Error::UnknownAgent(agent))?;
        let mut occupied = vec![false; self.cfg.cells()];
        for (id, a) in self.agents.iter().enumerate() {
            if id != agent {
                occupied[self.idx(a.position)] = true;
            }
        }
        let mut obs = Vec::with_capacity(OBS_DIM);
        let r = (WINDOW / 2) as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                match self.offset(me.position, dx, dy) {
                    None => obs.extend([1.0, 0.0, 0.0, 0.0, 0.0]),
                    Some(c) => {
                        let bush = self.bush_at(c);
                        obs.push(0.0);
                        obs.push(f64::from(u8::from(bush.is_some_and(|b| b.color == Color::Red))));
                        obs.push(f64::from(u8::from(bush.is_some_and(|b| b.color == Color::Blue))));
                        obs.push(f64::from(u8::from(bush.is_some_and(|b| b.has_ripe_berry))));
                        obs.push(f64::from(u8::from(occupied[self.idx(c)])));
                    }
                }
            }
        }
        let (red, blue) = self.census();
        let cells = self.cfg.cells() as f64;
        obs.push(me.preference.index() as f64);
        obs.push(f64::from(u8::from(me.z)));
        obs.push(f64::from(me.move_cooldown));
        obs.push(red as f64 / cells);
        obs.push(blue as f64 / cells);
        Ok(obs)
    }

    /// Advances one step in place.
    pub fn step(&mut self, actions: &[AhAction]) -> Result<StepReport> {
        let n = self.agents.len();
        if actions.len() != n {
            return Err(Error::Validation(format!("{} actions for {n} agents", actions.len())));
        }
        if self.is_done() {
            return Err(Error::Sequencing("episode already finished".into()));
        }
        let rw = self.cfg.rewards.clone();
        let mut rewards = vec![0.0; n];
        let mut outcomes = vec![Outcome::Stayed; n];
        for a in &mut self.agents {
            a.blocked_for_turn = false;
        }

        // blocks, applied simultaneously
        let mut blocked = vec![false; n];
        for i in 0..n {
            if actions[i] != AhAction::Block {
                continue;
            }
            let me = &self.agents[i];
            let adjacent = |j: &usize| {
                let o = &self.agents[*j];
                *j != i
                    && me.position.0.abs_diff(o.position.0) <= 1
                    && me.position.1.abs_diff(o.position.1) <= 1
            };
            let target = (0..n)
                .filter(adjacent)
                .find(|&j| self.agents[j].preference != me.preference)
                .or_else(|| (0..n).find(adjacent));
            match target {
                Some(j) => {
                    blocked[j] = true;
                    rewards[i] += if self.agents[j].preference != me.preference {
                        rw.block_opposing
                    } else {
                        rw.block_same
                    };
                    outcomes[i] = Outcome::Succeeded;
                }
                None => outcomes[i] = Outcome::Failed,
            }
        }
        for (j, b) in blocked.iter().enumerate() {
            if *b {
                self.agents[j].blocked_for_turn = true;
                outcomes[j] = Outcome::Blocked;
            }
        }

        // moves: target must be free at step start; contested cells go to the lowest id
        let mut occupied = vec![false; self.cfg.cells()];
        for a in &self.agents {
            occupied[self.idx(a.position)] = true;
        }
        let mut claimed = vec![false; self.cfg.cells()];
        let mut destinations = Vec::new();
        for (i, act) in actions.iter().enumerate() {
            if blocked[i] || !act.is_move() {
                continue;
            }
            let a = &self.agents[i];
            if a.z && a.move_cooldown != 0 {
                continue;
            }
            let (dx, dy) = act.delta();
            if let Some(c) = self.offset(a.position, dx, dy) {
                let k = self.idx(c);
                if !occupied[k] && !claimed[k] {
                    claimed[k] = true;
                    destinations.push((i, c));
                }
            }
        }
        for (i, c) in destinations {
            self.agents[i].position = c;
            outcomes[i] = Outcome::Moved;
        }

        // interactions on the agent's own cell
        for i in 0..n {
            if blocked[i] {
                continue;
            }
            let pref = self.agents[i].preference;
            let k = self.idx(self.agents[i].position);
            let regrowth = self.cfg.berry_regrowth_ts;
            let done = match (actions[i], &mut self.bushes[k]) {
                (AhAction::Eat, Some(b)) if b.has_ripe_berry => {
                    b.has_ripe_berry = false;
                    b.regrowth_countdown = regrowth;
                    rewards[i] += if b.color == pref { rw.eat_match } else { rw.eat_other };
                    true
                }
                (AhAction::ChangeColor, Some(b)) if b.color != pref => {
                    b.color = pref;
                    rewards[i] += rw.change_from_opposing;
                    true
                }
                (AhAction::ChangeColor, Some(_)) => {
                    rewards[i] += rw.change_other;
                    true
                }
                (AhAction::Ripen, Some(b)) if !b.has_ripe_berry => {
                    b.has_ripe_berry = true;
                    b.regrowth_countdown = 0;
                    rewards[i] += if b.color == pref { rw.ripen_match } else { rw.ripen_other };
                    true
                }
                (AhAction::Plant, slot @ None) => {
                    *slot = Some(Bush {
                        position: self.agents[i].position,
                        color: pref,
                        has_ripe_berry: false,
                        regrowth_countdown: regrowth,
                        age: 0,
                    });
                    rewards[i] += rw.plant;
                    true
                }
                (AhAction::Eat | AhAction::ChangeColor | AhAction::Ripen | AhAction::Plant, _) => false,
                _ => continue,
            };
            outcomes[i] = if done { Outcome::Succeeded } else { Outcome::Failed };
        }

        // dynamics: regrowth, ageing, death, spontaneous growth
        let fresh: Vec<bool> = (0..n)
            .map(|i| actions[i] == AhAction::Eat && outcomes[i] == Outcome::Succeeded)
            .collect();
        let mut just_eaten = vec![false; self.cfg.cells()];
        for (i, f) in fresh.iter().enumerate() {
            if *f {
                just_eaten[self.idx(self.agents[i].position)] = true;
            }
        }
        let lifespan = self.cfg.bush_lifespan_ts;
        for (k, slot) in self.bushes.iter_mut().enumerate() {
            if let Some(b) = slot {
                if !just_eaten[k] && b.regrowth_countdown > 0 {
                    b.regrowth_countdown -= 1;
                    if b.regrowth_countdown == 0 {
                        b.has_ripe_berry = true;
                    }
                }
                b.age += 1;
                if b.age >= lifespan {
                    *slot = None;
                }
            }
        }
        self.t += 1;
        if self.t % self.cfg.bush_growth_rate_ts as usize == 0 {
            self.grow();
        }
        for a in &mut self.agents {
            if a.z {
                a.move_cooldown ^= 1;
            }
        }
        Ok(StepReport { rewards, outcomes })
    }

    /// One new bush per colour with probability equal to that colour's
    /// share of the standing bushes.
    fn grow(&mut self) {
        let (red, blue) = self.census();
        let total = (red + blue) as f64;
        for (color, count) in [(Color::Red, red), (Color::Blue, blue)] {
            let u: f64 = self.rng.gen();
            let pick: f64 = self.rng.gen();
            if total == 0.0 || u >= count as f64 / total {
                continue;
            }
            let empty: Vec<usize> = (0..self.bushes.len()).filter(|&k| self.bushes[k].is_none()).collect();
            if empty.is_empty() {
                return;
            }
            let k = empty[((pick * empty.len() as f64) as usize).min(empty.len() - 1)];
            let position = (k % self.cfg.grid_width, k / self.cfg.grid_width);
            self.bushes[k] = Some(Bush {
                position,
                color,
                has_ripe_berry: false,
                regrowth_countdown: self.cfg.berry_regrowth_ts,
                age: 0,
            });
        }
    }
}

pub fn ah_observe(state: &AhState, agent: usize) -> Result<Vec<f64>> {
    state.observe(agent)
}

/// Pure form of [`AhState::step`].
pub fn ah_step(state: &AhState, actions: &[usize]) -> Result<(AhState, Vec<f64>)> {
    let actions = actions.iter().map(|&a| AhAction::from_index(a)).collect::<Result<Vec<_>>>()?;
    let mut next = state.clone();
    let report = next.step(&actions)?;
    Ok((next, report.rewards))
}

/// Violations of single occupancy and berry conservation across one step.
///
/// The ripe-berry count after the step must equal the ripe berries that
/// were neither eaten nor lost with a dying bush, plus successful ripenings
/// and regrowths that completed on this step.
pub fn check_transition(before: &AhState, actions: &[AhAction], report: &StepReport, after: &AhState) -> Vec<String> {
    let mut out = Vec::new();
    let cfg = &before.cfg;
    let mut seen = vec![false; cfg.cells()];
    for (i, a) in after.agents.iter().enumerate() {
        if a.position.0 >= cfg.grid_width || a.position.1 >= cfg.grid_height {
            out.push(format!("agent {i} left the grid"));
            continue;
        }
        let k = after.idx(a.position);
        if std::mem::replace(&mut seen[k], true) {
            out.push(format!("cell {:?} holds several agents", a.position));
        }
    }
    let succeeded = |i: usize, act: AhAction| actions[i] == act && report.outcomes[i] == Outcome::Succeeded;
    let mut eaten = vec![false; cfg.cells()];
    let mut ripened = vec![false; cfg.cells()];
    for i in 0..actions.len().min(after.agents.len()) {
        let k = after.idx(after.agents[i].position);
        if succeeded(i, AhAction::Eat) {
            if !before.bushes[k].as_ref().is_some_and(|b| b.has_ripe_berry) {
                out.push(format!("agent {i} ate from a cell without a ripe berry"));
            }
            eaten[k] = true;
        }
        if succeeded(i, AhAction::Ripen) {
            ripened[k] = true;
        }
    }
    let mut expected = 0;
    for (k, slot) in before.bushes.iter().enumerate() {
        let Some(b) = slot else { continue };
        if b.age + 1 >= cfg.bush_lifespan_ts {
            continue;
        }
        let ripe = (b.has_ripe_berry && !eaten[k]) || ripened[k] || (!b.has_ripe_berry && b.regrowth_countdown == 1);
        expected += ripe as usize;
    }
    let actual = after.bushes().filter(|b| b.has_ripe_berry).count();
    if actual != expected {
        out.push(format!("ripe berries: expected {expected}, found {actual}"));
    }
    out
}

/// One line of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub actions: Vec<AhAction>,
    pub rewards: Vec<f64>,
    pub red_bushes: usize,
    pub blue_bushes: usize,
}
