//! HospitalSim: a discrete-event hospital day with three learning decision
//! points (triage router, escort dispatcher, doctor manager) embedded in a
//! pathway of rule-based staff.
//!
//! Patient pathway: arrival, registration at a clerk, move to triage,
//! triage service, routing decision, move to the chosen ward, ward queue,
//! treatment, move to the exit. Impaired patients move only when escorted
//! by a nurse or a robot; the escort walks at the slower of the two speeds.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentProfile;
use crate::error::{Error, Result};

pub const WARDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ward {
    Pediatrics,
    PromptCare,
    AcuteCare,
    Imaging,
    Psychiatry,
    Resuscitation,
}

impl Ward {
    pub const ALL: [Ward; WARDS] = [
        Ward::Pediatrics,
        Ward::PromptCare,
        Ward::AcuteCare,
        Ward::Imaging,
        Ward::Psychiatry,
        Ward::Resuscitation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symptom {
    IsChild,
    Fever,
    Cough,
    MinorPain,
    ChestPain,
    ShortnessOfBreath,
    HighBloodPressure,
    SuspectedFracture,
    Confusion,
    Unconsciousness,
}

pub const SYMPTOMS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Illness {
    Pediatric,
    General,
    Cardio,
    Xray,
    Psychiatric,
    Emergency,
}

impl Illness {
    pub const ALL: [Illness; 6] = [
        Illness::Pediatric,
        Illness::General,
        Illness::Cardio,
        Illness::Xray,
        Illness::Psychiatric,
        Illness::Emergency,
    ];

    pub fn symptoms(self) -> &'static [Symptom] {
        use Symptom::*;
        match self {
            Illness::Pediatric => &[IsChild, Fever, Cough],
            Illness::General => &[Fever, MinorPain],
            Illness::Cardio => &[ChestPain, ShortnessOfBreath, HighBloodPressure],
            Illness::Xray => &[SuspectedFracture, MinorPain],
            Illness::Psychiatric => &[Confusion, HighBloodPressure],
            Illness::Emergency => &[Unconsciousness, ChestPain, ShortnessOfBreath],
        }
    }

    /// Wards able to treat the illness with their reward weights, primary first.
    pub fn wards(self) -> &'static [(Ward, f64)] {
        use Ward::*;
        match self {
            Illness::Pediatric => &[(Pediatrics, 1.0), (PromptCare, 0.6)],
            Illness::General => &[(PromptCare, 1.0), (AcuteCare, 0.5)],
            Illness::Cardio => &[(AcuteCare, 1.0), (Resuscitation, 0.7), (PromptCare, 0.4)],
            Illness::Xray => &[(Imaging, 1.0), (PromptCare, 0.5)],
            Illness::Psychiatric => &[(Psychiatry, 1.0), (PromptCare, 0.2)],
            Illness::Emergency => &[(Resuscitation, 1.0)],
        }
    }

    pub fn primary_ward(self) -> Ward {
        self.wards()[0].0
    }
}

/// Reward weight of treating `illness` in `ward`; 0 when the ward is not listed.
pub fn ward_weight(illness: Illness, ward: Ward) -> f64 {
    illness.wards().iter().find(|(w, _)| *w == ward).map_or(0.0, |(_, x)| *x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Routing {
    Perfect,
    Backup,
    Incorrect,
}

pub fn classify(illness: Illness, ward: Ward) -> Routing {
    let w = ward_weight(illness, ward);
    if w == 1.0 {
        Routing::Perfect
    } else if w > 0.0 {
        Routing::Backup
    } else {
        Routing::Incorrect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::High, Priority::Medium, Priority::Low];

    /// Legitimate-factor level.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Waiting-cost multiplier: high 3, medium 2, low 1.
    pub fn factor(self) -> f64 {
        match self {
            Priority::High => 3.0,
            Priority::Medium => 2.0,
            Priority::Low => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Impairment {
    None,
    Low,
    High,
}

impl Impairment {
    pub fn speed(self) -> f64 {
        match self {
            Impairment::None => 75.0,
            Impairment::Low => 60.0,
            Impairment::High => 45.0,
        }
    }

    /// Counterfactual flip: none and high swap, low is unchanged.
    pub fn flipped(self) -> Self {
        match self {
            Impairment::None => Impairment::High,
            Impairment::High => Impairment::None,
            Impairment::Low => Impairment::Low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    Entrance,
    Triage,
    Ward(usize),
    Hub,
    Exit,
}

impl Location {
    pub const COUNT: usize = 10;

    pub fn index(self) -> usize {
        match self {
            Location::Entrance => 0,
            Location::Triage => 1,
            Location::Ward(w) => 2 + w,
            Location::Hub => 8,
            Location::Exit => 9,
        }
    }
}

/// Corridor lengths via the central hub; Imaging and Psychiatry sit one
/// floor up.
pub fn default_distances() -> Vec<Vec<f64>> {
    let hub = [60.0, 40.0, 80.0, 50.0, 70.0, 190.0, 200.0, 60.0, 0.0, 60.0];
    (0..Location::COUNT)
        .map(|a| (0..Location::COUNT).map(|b| if a == b { 0.0 } else { hub[a] + hub[b] }).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsRewards {
    pub treatment: f64,
    pub wait_per_minute: f64,
    pub incorrect_routing: f64,
    pub escort_nurse_bonus: f64,
    pub escort_distance: f64,
    pub escort_wait: f64,
    pub doctor_queue: f64,
    pub doctor_move: f64,
}

impl Default for HsRewards {
    fn default() -> Self {
        Self {
            treatment: 10.0,
            wait_per_minute: 0.01,
            incorrect_routing: -2.0,
            escort_nurse_bonus: 0.5,
            escort_distance: 0.002,
            escort_wait: 0.01,
            doctor_queue: 0.1,
            doctor_move: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsConfig {
    pub clerks: usize,
    pub nurses: usize,
    pub robots: usize,
    pub triage_dispatchers: usize,
    pub swing_doctors: usize,
    pub ward_doctors_per_ward: usize,
    pub patients_per_day: usize,
    pub day_length_min: f64,
    pub peak_start_min: f64,
    pub peak_end_min: f64,
    /// Peak arrival rate over the off-peak rate.
    pub peak_multiplier: f64,
    pub distances: Vec<Vec<f64>>,
    pub treatment_mean_min: f64,
    pub treatment_cap_min: f64,
    /// Clerk and triage-dispatcher service time.
    pub service_delay_min: f64,
    pub rebalance_interval_min: f64,
    pub nurse_speed: f64,
    pub robot_speed: f64,
    pub doctor_speed: f64,
    pub rewards: HsRewards,
}

impl Default for HsConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl HsConfig {
    pub fn baseline() -> Self {
        Self {
            clerks: 30,
            nurses: 60,
            robots: 30,
            triage_dispatchers: 30,
            swing_doctors: 18,
            ward_doctors_per_ward: 10,
            patients_per_day: 300,
            day_length_min: 720.0,
            peak_start_min: 180.0,
            peak_end_min: 360.0,
            peak_multiplier: 3.0,
            distances: default_distances(),
            treatment_mean_min: 20.0,
            treatment_cap_min: 60.0,
            service_delay_min: 2.0,
            rebalance_interval_min: 30.0,
            nurse_speed: 90.0,
            robot_speed: 100.0,
            doctor_speed: 90.0,
            rewards: HsRewards::default(),
        }
    }

    /// Staffing scaled with the 60-patient day.
    pub fn desk() -> Self {
        Self {
            clerks: 6,
            nurses: 12,
            robots: 6,
            triage_dispatchers: 6,
            swing_doctors: 4,
            ward_doctors_per_ward: 2,
            patients_per_day: 60,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clerks == 0 || self.triage_dispatchers == 0 || self.nurses + self.robots == 0 {
            return Err(Error::Config("clerk, dispatcher and escort pools must be non-empty".into()));
        }
        if !(self.day_length_min > 0.0) {
            return Err(Error::Config("day length must be positive".into()));
        }
        if self.distances.len() != Location::COUNT || self.distances.iter().any(|r| r.len() != Location::COUNT) {
            return Err(Error::Config(format!("distance matrix must be {0}x{0}", Location::COUNT)));
        }
        for a in 0..Location::COUNT {
            for b in 0..Location::COUNT {
                let d = self.distances[a][b];
                if !(d >= 0.0) || d != self.distances[b][a] {
                    return Err(Error::Config("distance matrix must be symmetric and non-negative".into()));
                }
            }
        }
        for v in [self.nurse_speed, self.robot_speed, self.doctor_speed, self.treatment_mean_min, self.rebalance_interval_min] {
            if !(v > 0.0) {
                return Err(Error::Config("speeds, treatment mean and rebalance interval must be positive".into()));
            }
        }
        if self.peak_multiplier < 0.0 || self.peak_start_min > self.peak_end_min {
            return Err(Error::Config("invalid peak window".into()));
        }
        Ok(())
    }

    fn distance(&self, a: Location, b: Location) -> f64 {
        self.distances[a.index()][b.index()]
    }

    fn rate(&self, t: f64) -> f64 {
        if t >= self.peak_start_min && t < self.peak_end_min {
            self.peak_multiplier
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    NotArrived,
    Registration,
    AwaitingEscort(Location),
    Moving(Location),
    TriageService,
    AwaitingRouting,
    WardQueue(usize),
    InTreatment(usize),
    Exited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaitKind {
    Registration,
    Escort,
    Triage,
    Ward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: usize,
    pub priority: Priority,
    pub impairment: Impairment,
    pub illness: Illness,
    pub symptoms: Vec<Symptom>,
    pub speed: f64,
    pub arrival_time: f64,
    /// Uniform draw fixing the treatment duration.
    pub treatment_draw: f64,
    pub stage: Stage,
    pub location: Location,
    pub accumulated_reward: f64,
    /// Minutes waited per [`WaitKind`].
    pub waits: [f64; 4],
    wait_since: Option<(WaitKind, f64)>,
    pub ward: Option<usize>,
    pub routing: Option<Routing>,
    pub treated: bool,
    router_decision: Option<u64>,
}

impl Patient {
    /// Sensitive attribute: any impairment.
    pub fn z(&self) -> bool {
        self.impairment != Impairment::None
    }

    pub fn self_moving(&self) -> bool {
        self.impairment == Impairment::None
    }
}

/// Draws a patient's attributes; arrival time and id are set by the caller.
pub fn sample_patient<R: Rng + ?Sized>(rng: &mut R) -> Patient {
    let priority = Priority::ALL[rng.gen_range(0..3)];
    let illness = Illness::ALL[rng.gen_range(0..6)];
    let u: f64 = rng.gen();
    let impairment = if u < 0.60 {
        Impairment::None
    } else if u < 0.85 {
        Impairment::Low
    } else {
        Impairment::High
    };
    Patient {
        id: 0,
        priority,
        impairment,
        illness,
        symptoms: illness.symptoms().to_vec(),
        speed: impairment.speed(),
        arrival_time: 0.0,
        treatment_draw: rng.gen(),
        stage: Stage::NotArrived,
        location: Location::Entrance,
        accumulated_reward: 0.0,
        waits: [0.0; 4],
        wait_since: None,
        ward: None,
        routing: None,
        treated: false,
        router_decision: None,
    }
}

/// Exactly `patients_per_day` arrival times, sorted, by thinning uniform
/// proposals against the piecewise-constant rate.
pub fn sample_arrival_times<R: Rng + ?Sized>(rng: &mut R, cfg: &HsConfig) -> Result<Vec<f64>> {
    let max_rate = cfg.peak_multiplier.max(1.0);
    let peak = (cfg.peak_end_min.min(cfg.day_length_min) - cfg.peak_start_min.max(0.0)).max(0.0);
    let total = cfg.peak_multiplier * peak + (cfg.day_length_min - peak);
    if !(total > 0.0) || !(max_rate > 0.0) {
        return Err(Error::Config("arrival schedule has zero total rate".into()));
    }
    let mut times = Vec::with_capacity(cfg.patients_per_day);
    while times.len() < cfg.patients_per_day {
        let t = rng.gen::<f64>() * cfg.day_length_min;
        if rng.gen::<f64>() * max_rate < cfg.rate(t) {
            times.push(t);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(times)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaffKind {
    Nurse,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Staff {
    pub kind: StaffKind,
    pub location: Location,
    pub busy_with: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Doctor {
    pub swing: bool,
    /// Ward the doctor is assigned to.
    pub home: usize,
    /// Ward the doctor is in; `None` while walking.
    pub present: Option<usize>,
    pub busy_with: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Arrival(usize),
    RegistrationDone(usize),
    EscortRequest { patient: usize, to: Location },
    EscortAssigned { patient: usize, staff: usize },
    MoveComplete { patient: usize, staff: Option<usize>, to: Location },
    TriageDecision(usize),
    TreatmentComplete { patient: usize, ward: usize, doctor: usize },
    DoctorArrived { doctor: usize, ward: usize },
    DoctorRebalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for HsEvent {}

impl Ord for HsEvent {
    // reversed: BinaryHeap pops the earliest time, then the earliest insertion
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for HsEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HsAgent {
    Triage,
    Escort,
    Doctor,
}

impl HsAgent {
    pub const ALL: [HsAgent; 3] = [HsAgent::Triage, HsAgent::Escort, HsAgent::Doctor];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn obs_dim(self) -> usize {
        match self {
            HsAgent::Triage => TRIAGE_OBS,
            HsAgent::Escort => ESCORT_OBS,
            HsAgent::Doctor => DOCTOR_OBS,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            HsAgent::Triage => WARDS,
            HsAgent::Escort => 6,
            HsAgent::Doctor => WARDS + 1,
        }
    }
}

pub const TRIAGE_OBS: usize = SYMPTOMS + 3 + WARDS;
pub const ESCORT_OBS: usize = 6;
pub const DOCTOR_OBS: usize = 3 * WARDS;

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRequest {
    pub id: u64,
    pub agent: HsAgent,
    pub observation: Vec<f64>,
    pub action_count: usize,
    pub patient: Option<usize>,
}

/// Reward owed to the learning agent for decision `decision`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEvent {
    pub agent: HsAgent,
    pub decision: u64,
    pub amount: f64,
}

/// Effect of an applied decision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Applied {
    /// Patient the decision concerned, if any.
    pub patient: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct Pool {
    capacity: usize,
    serving: Vec<usize>,
    queue: VecDeque<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EscortRequestEntry {
    patient: usize,
    since: f64,
    to: Location,
}

#[derive(Debug, Clone)]
pub struct HsState {
    cfg: HsConfig,
    pub now: f64,
    pub patients: Vec<Patient>,
    pub staff: Vec<Staff>,
    pub doctors: Vec<Doctor>,
    events: BinaryHeap<HsEvent>,
    seq: u64,
    clerks: Pool,
    dispatchers: Pool,
    routing_queue: VecDeque<usize>,
    escort_pending: Vec<EscortRequestEntry>,
    ward_queues: Vec<VecDeque<usize>>,
    rebalance_due: bool,
    pending: Option<(u64, HsAgent, Option<usize>)>,
    next_decision: u64,
    last_doctor_decision: Option<(u64, usize)>,
    rewards: Vec<RewardEvent>,
    finished: bool,
    time_violations: usize,
    pub swing_moves: usize,
    escort_waits: Vec<f64>,
    escort_travels: Vec<f64>,
}

/// A fresh day for `seed`: every patient and arrival time is drawn up front
/// so paired worlds share them.
pub fn hs_reset(cfg: &HsConfig, seed: u64) -> Result<HsState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = sample_arrival_times(&mut rng, cfg)?;
    let patients: Vec<Patient> = times
        .iter()
        .enumerate()
        .map(|(id, &t)| Patient { id, arrival_time: t, ..sample_patient(&mut rng) })
        .collect();
    let staff = (0..cfg.nurses)
        .map(|_| StaffKind::Nurse)
        .chain((0..cfg.robots).map(|_| StaffKind::Robot))
        .map(|kind| Staff { kind, location: Location::Hub, busy_with: None })
        .collect();
    let mut doctors = Vec::new();
    for w in 0..WARDS {
        for _ in 0..cfg.ward_doctors_per_ward {
            doctors.push(Doctor { swing: false, home: w, present: Some(w), busy_with: None });
        }
    }
    for k in 0..cfg.swing_doctors {
        doctors.push(Doctor { swing: true, home: k % WARDS, present: Some(k % WARDS), busy_with: None });
    }
    let mut s = HsState {
        cfg: cfg.clone(),
        now: 0.0,
        patients,
        staff,
        doctors,
        events: BinaryHeap::new(),
        seq: 0,
        clerks: Pool { capacity: cfg.clerks, ..Default::default() },
        dispatchers: Pool { capacity: cfg.triage_dispatchers, ..Default::default() },
        routing_queue: VecDeque::new(),
        escort_pending: Vec::new(),
        ward_queues: vec![VecDeque::new(); WARDS],
        rebalance_due: false,
        pending: None,
        next_decision: 0,
        last_doctor_decision: None,
        rewards: Vec::new(),
        finished: false,
        time_violations: 0,
        swing_moves: 0,
        escort_waits: Vec::new(),
        escort_travels: Vec::new(),
    };
    for (id, t) in times.iter().enumerate() {
        s.schedule(*t, EventKind::Arrival(id));
    }
    if cfg.swing_doctors > 0 {
        s.schedule(cfg.rebalance_interval_min, EventKind::DoctorRebalance);
    }
    Ok(s)
}

impl HsState {
    pub fn config(&self) -> &HsConfig {
        &self.cfg
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// The same day with every patient's impairment flipped.
    pub fn flipped(&self) -> Result<HsState> {
        if self.seq as usize != self.events.len() || self.now != 0.0 {
            return Err(Error::Sequencing("only a fresh day can be flipped".into()));
        }
        let mut s = self.clone();
        for p in &mut s.patients {
            p.impairment = p.impairment.flipped();
            p.speed = p.impairment.speed();
        }
        Ok(s)
    }

    /// Patients as population members: `z` = impaired, `lf` = priority.
    pub fn profiles(&self) -> Vec<AgentProfile> {
        self.patients
            .iter()
            .map(|p| AgentProfile { id: p.id, z: p.z(), lf: p.priority.index(), action_count: 1 })
            .collect()
    }

    pub fn take_rewards(&mut self) -> Vec<RewardEvent> {
        std::mem::take(&mut self.rewards)
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.events.push(HsEvent { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn begin_wait(&mut self, pid: usize, kind: WaitKind) {
        self.patients[pid].wait_since = Some((kind, self.now));
    }

    fn end_wait(&mut self, pid: usize) -> f64 {
        let now = self.now;
        let per_min = self.cfg.rewards.wait_per_minute;
        let p = &mut self.patients[pid];
        match p.wait_since.take() {
            Some((kind, since)) => {
                let dt = now - since;
                p.waits[kind as usize] += dt;
                p.accumulated_reward -= per_min * p.priority.factor() * dt;
                dt
            }
            None => 0.0,
        }
    }

    /// Processes events until a learning agent must act or the day ends.
    pub fn advance(&mut self) -> Result<Option<DecisionRequest>> {
        if self.pending.is_some() {
            return Err(Error::Sequencing("a decision is still outstanding".into()));
        }
        loop {
            if self.finished {
                return Ok(None);
            }
            if let Some(req) = self.ready_request() {
                self.pending = Some((req.id, req.agent, req.patient));
                return Ok(Some(req));
            }
            match self.events.peek() {
                Some(ev) if ev.time <= self.cfg.day_length_min => {
                    let ev = self.events.pop().expect("peeked");
                    if ev.time < self.now {
                        self.time_violations += 1;
                    }
                    self.now = ev.time;
                    self.process(ev.kind);
                }
                _ => {
                    self.finish();
                    return Ok(None);
                }
            }
        }
    }

    fn finish(&mut self) {
        self.now = self.now.max(self.cfg.day_length_min);
        for pid in 0..self.patients.len() {
            self.end_wait(pid);
        }
        self.credit_doctor();
        self.finished = true;
    }

    fn ready_request(&mut self) -> Option<DecisionRequest> {
        let (agent, patient) = if let Some(&pid) = self.routing_queue.front() {
            (HsAgent::Triage, Some(pid))
        } else if self.rebalance_due {
            (HsAgent::Doctor, None)
        } else if !self.escort_pending.is_empty() && self.staff.iter().any(|s| s.busy_with.is_none()) {
            (HsAgent::Escort, None)
        } else {
            return None;
        };
        let observation = match agent {
            HsAgent::Triage => self.triage_observe(patient.expect("triage has a patient")),
            HsAgent::Escort => self.escort_observe(),
            HsAgent::Doctor => self.doctor_observe(),
        };
        let id = self.next_decision;
        self.next_decision += 1;
        Some(DecisionRequest { id, agent, observation, action_count: agent.action_count(), patient })
    }

    fn process(&mut self, kind: EventKind) {
        match kind {
            EventKind::Arrival(pid) => {
                self.patients[pid].stage = Stage::Registration;
                self.patients[pid].location = Location::Entrance;
                self.begin_wait(pid, WaitKind::Registration);
                self.clerks.queue.push_back(pid);
                self.serve_clerks();
            }
            EventKind::RegistrationDone(pid) => {
                self.clerks.serving.retain(|&p| p != pid);
                self.serve_clerks();
                self.depart(pid, Location::Triage);
            }
            EventKind::EscortRequest { patient, to } => {
                self.patients[patient].stage = Stage::AwaitingEscort(to);
                self.begin_wait(patient, WaitKind::Escort);
                self.escort_pending.push(EscortRequestEntry { patient, since: self.now, to });
            }
            EventKind::EscortAssigned { patient, staff } => {
                let wait = self.end_wait(patient);
                self.escort_waits.push(wait);
                let Stage::AwaitingEscort(to) = self.patients[patient].stage else {
                    unreachable!("escort reached a patient that is not waiting for one")
                };
                let from = self.patients[patient].location;
                let speed = self.staff_speed(staff).min(self.patients[patient].speed);
                let dt = self.cfg.distance(from, to) / speed;
                self.escort_travels.push(dt);
                self.staff[staff].location = from;
                self.patients[patient].stage = Stage::Moving(to);
                self.schedule(self.now + dt, EventKind::MoveComplete { patient, staff: Some(staff), to });
            }
            EventKind::MoveComplete { patient, staff, to } => {
                if let Some(s) = staff {
                    self.staff[s].location = to;
                    self.staff[s].busy_with = None;
                }
                self.patients[patient].location = to;
                match to {
                    Location::Triage => {
                        self.patients[patient].stage = Stage::TriageService;
                        self.begin_wait(patient, WaitKind::Triage);
                        self.dispatchers.queue.push_back(patient);
                        self.serve_dispatchers();
                    }
                    Location::Ward(w) => {
                        self.patients[patient].stage = Stage::WardQueue(w);
                        self.begin_wait(patient, WaitKind::Ward);
                        self.ward_queues[w].push_back(patient);
                        self.start_treatments(w);
                    }
                    Location::Exit => self.patients[patient].stage = Stage::Exited,
                    Location::Entrance | Location::Hub => {}
                }
            }
            EventKind::TriageDecision(pid) => {
                self.dispatchers.serving.retain(|&p| p != pid);
                self.serve_dispatchers();
                self.patients[pid].stage = Stage::AwaitingRouting;
                self.routing_queue.push_back(pid);
            }
            EventKind::TreatmentComplete { patient, ward, doctor } => {
                self.doctors[doctor].busy_with = None;
                let p = &mut self.patients[patient];
                p.treated = true;
                let weight = ward_weight(p.illness, Ward::ALL[ward]);
                p.accumulated_reward += self.cfg.rewards.treatment * weight;
                if let Some(decision) = p.router_decision {
                    let amount = weight - self.cfg.rewards.wait_per_minute * p.priority.factor() * p.waits[WaitKind::Ward as usize];
                    self.rewards.push(RewardEvent { agent: HsAgent::Triage, decision, amount });
                }
                self.depart(patient, Location::Exit);
                self.settle_doctor(doctor);
                self.start_treatments(ward);
            }
            EventKind::DoctorArrived { doctor, ward } => {
                self.doctors[doctor].present = Some(ward);
                self.settle_doctor(doctor);
                self.start_treatments(ward);
            }
            EventKind::DoctorRebalance => {
                self.credit_doctor();
                self.rebalance_due = true;
                let next = self.now + self.cfg.rebalance_interval_min;
                if next <= self.cfg.day_length_min {
                    self.schedule(next, EventKind::DoctorRebalance);
                }
            }
        }
    }

    fn staff_speed(&self, staff: usize) -> f64 {
        match self.staff[staff].kind {
            StaffKind::Nurse => self.cfg.nurse_speed,
            StaffKind::Robot => self.cfg.robot_speed,
        }
    }

    /// Sends a patient towards `to`, alone or via an escort request.
    fn depart(&mut self, pid: usize, to: Location) {
        let p = &self.patients[pid];
        if p.self_moving() {
            let dt = self.cfg.distance(p.location, to) / p.speed;
            self.patients[pid].stage = Stage::Moving(to);
            self.schedule(self.now + dt, EventKind::MoveComplete { patient: pid, staff: None, to });
        } else {
            self.patients[pid].stage = Stage::AwaitingEscort(to);
            self.schedule(self.now, EventKind::EscortRequest { patient: pid, to });
        }
    }

    fn serve_clerks(&mut self) {
        while self.clerks.serving.len() < self.clerks.capacity {
            let Some(pid) = self.clerks.queue.pop_front() else { break };
            self.end_wait(pid);
            self.clerks.serving.push(pid);
            self.schedule(self.now + self.cfg.service_delay_min, EventKind::RegistrationDone(pid));
        }
    }

    fn serve_dispatchers(&mut self) {
        while self.dispatchers.serving.len() < self.dispatchers.capacity {
            let Some(pid) = self.dispatchers.queue.pop_front() else { break };
            self.end_wait(pid);
            self.dispatchers.serving.push(pid);
            self.schedule(self.now + self.cfg.service_delay_min, EventKind::TriageDecision(pid));
        }
    }

    fn doctor_available(&self, d: usize, ward: usize) -> bool {
        let doc = &self.doctors[d];
        doc.home == ward && doc.present == Some(ward) && doc.busy_with.is_none()
    }

    fn start_treatments(&mut self, ward: usize) {
        while !self.ward_queues[ward].is_empty() {
            let Some(d) = (0..self.doctors.len()).find(|&d| self.doctor_available(d, ward)) else { break };
            let pid = self.ward_queues[ward].pop_front().expect("non-empty");
            self.end_wait(pid);
            self.doctors[d].busy_with = Some(pid);
            let p = &mut self.patients[pid];
            p.stage = Stage::InTreatment(ward);
            let draw = -self.cfg.treatment_mean_min * (1.0 - p.treatment_draw).ln();
            let dt = draw.min(self.cfg.treatment_cap_min);
            self.schedule(self.now + dt, EventKind::TreatmentComplete { patient: pid, ward, doctor: d });
        }
    }

    /// Sends an idle doctor to their assigned ward if they are elsewhere.
    fn settle_doctor(&mut self, d: usize) {
        let doc = &self.doctors[d];
        if doc.busy_with.is_some() {
            return;
        }
        if let Some(at) = doc.present {
            if at != doc.home {
                let home = doc.home;
                let dt = self.cfg.distance(Location::Ward(at), Location::Ward(home)) / self.cfg.doctor_speed;
                self.doctors[d].present = None;
                self.schedule(self.now + dt, EventKind::DoctorArrived { doctor: d, ward: home });
            }
        }
    }

    fn credit_doctor(&mut self) {
        if let Some((decision, moves)) = self.last_doctor_decision.take() {
            let load: f64 = self
                .ward_queues
                .iter()
                .flatten()
                .map(|&p| self.patients[p].priority.factor())
                .sum();
            let rw = &self.cfg.rewards;
            let amount = -rw.doctor_queue * load - rw.doctor_move * moves as f64;
            self.rewards.push(RewardEvent { agent: HsAgent::Doctor, decision, amount });
        }
    }

    /// Symptom indicators, priority one-hot and expected wait per ward in hours.
    pub fn triage_observe(&self, pid: usize) -> Vec<f64> {
        let p = &self.patients[pid];
        let mut obs = vec![0.0; TRIAGE_OBS];
        for s in &p.symptoms {
            obs[*s as usize] = 1.0;
        }
        obs[SYMPTOMS + p.priority.index()] = 1.0;
        for w in 0..WARDS {
            obs[SYMPTOMS + 3 + w] = self.expected_wait(w) / 60.0;
        }
        obs
    }

    /// Queue length times mean treatment time over the doctors on hand.
    pub fn expected_wait(&self, ward: usize) -> f64 {
        let active = self.doctors.iter().filter(|d| d.home == ward && d.present == Some(ward)).count();
        self.ward_queues[ward].len() as f64 * self.cfg.treatment_mean_min / active.max(1) as f64
    }

    /// Pending requests per priority (over 10), longest wait in hours, idle
    /// nurse and robot shares.
    pub fn escort_observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; ESCORT_OBS];
        for r in &self.escort_pending {
            obs[self.patients[r.patient].priority.index()] += 0.1;
        }
        obs[3] = self.longest_escort_wait() / 60.0;
        for (k, kind) in [StaffKind::Nurse, StaffKind::Robot].into_iter().enumerate() {
            let all = self.staff.iter().filter(|s| s.kind == kind).count();
            let idle = self.staff.iter().filter(|s| s.kind == kind && s.busy_with.is_none()).count();
            obs[4 + k] = if all == 0 { 0.0 } else { idle as f64 / all as f64 };
        }
        obs
    }

    pub fn longest_escort_wait(&self) -> f64 {
        self.escort_pending.iter().map(|r| self.now - r.since).fold(0.0, f64::max)
    }

    /// Per ward: queue length over 10, available-doctor share, mean queue
    /// priority over 3.
    pub fn doctor_observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(DOCTOR_OBS);
        for w in 0..WARDS {
            obs.push(self.ward_queues[w].len() as f64 / 10.0);
            obs.push(self.available_doctor_share(w));
            obs.push(self.mean_queue_priority(w) / 3.0);
        }
        obs
    }

    pub fn available_doctor_share(&self, ward: usize) -> f64 {
        let assigned = self.doctors.iter().filter(|d| d.home == ward).count();
        let available = (0..self.doctors.len()).filter(|&d| self.doctor_available(d, ward)).count();
        if assigned == 0 {
            0.0
        } else {
            available as f64 / assigned as f64
        }
    }

    /// Mean priority factor (high 3, medium 2, low 1) of the queue; 0 if empty.
    pub fn mean_queue_priority(&self, ward: usize) -> f64 {
        let q = &self.ward_queues[ward];
        if q.is_empty() {
            return 0.0;
        }
        q.iter().map(|&p| self.patients[p].priority.factor()).sum::<f64>() / q.len() as f64
    }

    pub fn swing_allocation(&self) -> [usize; WARDS] {
        let mut a = [0; WARDS];
        for d in self.doctors.iter().filter(|d| d.swing) {
            a[d.home] += 1;
        }
        a
    }

    fn take_pending(&mut self, id: u64, agent: HsAgent) -> Result<Option<usize>> {
        match self.pending {
            Some((pid, a, patient)) if pid == id && a == agent => {
                self.pending = None;
                Ok(patient)
            }
            Some((pid, a, _)) => Err(Error::Sequencing(format!(
                "decision {id} for {agent:?} is stale; outstanding is {pid} for {a:?}"
            ))),
            None => Err(Error::Sequencing(format!("no outstanding decision (got {id})"))),
        }
    }

    /// Answers the outstanding request `id` with `action`.
    pub fn apply(&mut self, id: u64, agent: HsAgent, action: usize) -> Result<Applied> {
        if action >= agent.action_count() {
            return Err(Error::Validation(format!("action {action} out of range for {agent:?}")));
        }
        let patient = match self.pending {
            Some((pid, a, p)) if pid == id && a == agent => p,
            _ => return self.take_pending(id, agent).map(|_| Applied::default()),
        };
        let applied = match agent {
            HsAgent::Triage => {
                let pid = patient.expect("triage request names a patient");
                let r = self.triage_apply(pid, action, id)?;
                Applied { patient: Some(pid), reward: r }
            }
            HsAgent::Escort => {
                let (pid, staff) = self.escort_choice(action).ok_or_else(|| {
                    Error::Sequencing("escort decision with nothing to assign".into())
                })?;
                let r = self.escort_apply(pid, staff)?;
                self.rewards.push(RewardEvent { agent, decision: id, amount: r });
                Applied { patient: Some(pid), reward: r }
            }
            HsAgent::Doctor => {
                let mut alloc = self.swing_allocation();
                if action < WARDS {
                    let source = (0..WARDS)
                        .filter(|&w| w != action && alloc[w] > 0)
                        .min_by_key(|&w| (self.ward_queues[w].len(), w));
                    if let Some(src) = source {
                        alloc[src] -= 1;
                        alloc[action] += 1;
                    }
                }
                let moves = self.doctor_apply(&alloc)?;
                self.rebalance_due = false;
                self.last_doctor_decision = Some((id, moves));
                Applied { patient: None, reward: 0.0 }
            }
        };
        self.pending = None;
        Ok(applied)
    }

    /// Routes a patient waiting at triage; returns the immediate router reward.
    pub fn triage_apply(&mut self, pid: usize, ward: usize, decision: u64) -> Result<f64> {
        if ward >= WARDS {
            return Err(Error::Validation(format!("ward {ward} out of range")));
        }
        if self.routing_queue.front() != Some(&pid) {
            return Err(Error::Sequencing(format!("patient {pid} is not awaiting routing")));
        }
        self.routing_queue.pop_front();
        let illness = self.patients[pid].illness;
        let routing = classify(illness, Ward::ALL[ward]);
        let p = &mut self.patients[pid];
        p.routing = Some(routing);
        p.router_decision = Some(decision);
        let mut reward = 0.0;
        let target = if routing == Routing::Incorrect {
            reward = self.cfg.rewards.incorrect_routing;
            self.rewards.push(RewardEvent { agent: HsAgent::Triage, decision, amount: reward });
            illness.primary_ward().index()
        } else {
            ward
        };
        self.patients[pid].ward = Some(target);
        self.depart(pid, Location::Ward(target));
        Ok(reward)
    }

    /// Maps an escort action (priority class x staff kind) to a concrete
    /// request and staff member, falling back to the oldest request and to
    /// the other staff kind.
    fn escort_choice(&self, action: usize) -> Option<(usize, usize)> {
        let priority = Priority::ALL[action / 2];
        let kind = if action % 2 == 0 { StaffKind::Nurse } else { StaffKind::Robot };
        let oldest = |filter: &dyn Fn(&EscortRequestEntry) -> bool| {
            self.escort_pending
                .iter()
                .filter(|r| filter(r))
                .min_by(|a, b| a.since.total_cmp(&b.since).then(a.patient.cmp(&b.patient)))
                .map(|r| r.patient)
        };
        let pid = oldest(&|r| self.patients[r.patient].priority == priority).or_else(|| oldest(&|_| true))?;
        let at = self.patients[pid].location;
        let nearest = |k: StaffKind| {
            (0..self.staff.len())
                .filter(|&s| self.staff[s].kind == k && self.staff[s].busy_with.is_none())
                .min_by(|&a, &b| {
                    let da = self.cfg.distance(self.staff[a].location, at);
                    let db = self.cfg.distance(self.staff[b].location, at);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
        };
        let other = if kind == StaffKind::Nurse { StaffKind::Robot } else { StaffKind::Nurse };
        let staff = nearest(kind).or_else(|| nearest(other))?;
        Some((pid, staff))
    }

    /// Dispatches `staff` to the waiting `pid`; returns the dispatcher reward.
    pub fn escort_apply(&mut self, pid: usize, staff: usize) -> Result<f64> {
        let s = self.staff.get(staff).ok_or_else(|| Error::Validation(format!("no staff member {staff}")))?;
        if s.busy_with.is_some() {
            return Err(Error::Validation(format!("staff member {staff} is busy")));
        }
        let Some(pos) = self.escort_pending.iter().position(|r| r.patient == pid) else {
            return Err(Error::Validation(format!("patient {pid} has no pending escort request")));
        };
        let req = self.escort_pending.remove(pos);
        let p = &self.patients[pid];
        let distance = self.cfg.distance(s.location, p.location);
        let rw = &self.cfg.rewards;
        let skill = if s.kind == StaffKind::Nurse { 1.0 + rw.escort_nurse_bonus } else { 1.0 };
        let reward = p.priority.factor() * skill - rw.escort_distance * distance - rw.escort_wait * (self.now - req.since);
        let dt = distance / self.staff_speed(staff);
        self.staff[staff].busy_with = Some(pid);
        self.schedule(self.now + dt, EventKind::EscortAssigned { patient: pid, staff });
        Ok(reward)
    }

    /// Reassigns swing doctors to reach `allocation` with the fewest moves;
    /// returns the number of moves.
    pub fn doctor_apply(&mut self, allocation: &[usize; WARDS]) -> Result<usize> {
        let total: usize = allocation.iter().sum();
        if total > self.cfg.swing_doctors {
            return Err(Error::Validation(format!(
                "allocation of {total} exceeds {} swing doctors",
                self.cfg.swing_doctors
            )));
        }
        let current = self.swing_allocation();
        let mut movers = Vec::new();
        for w in 0..WARDS {
            let surplus = current[w].saturating_sub(allocation[w]);
            let mut here: Vec<usize> = (0..self.doctors.len())
                .filter(|&d| self.doctors[d].swing && self.doctors[d].home == w)
                .collect();
            // idle doctors on site leave first
            here.sort_by_key(|&d| (self.doctors[d].busy_with.is_some(), self.doctors[d].present != Some(w), d));
            movers.extend(here.into_iter().take(surplus));
        }
        let mut moves = 0;
        let mut movers = movers.into_iter();
        for w in 0..WARDS {
            for _ in current[w]..allocation[w] {
                let Some(d) = movers.next() else { break };
                self.doctors[d].home = w;
                if self.doctors[d].present.is_some() {
                    self.settle_doctor(d);
                }
                moves += 1;
            }
        }
        self.swing_moves += moves;
        Ok(moves)
    }

    /// Drives the day to its end with `policy` choosing every action.
    pub fn run_with(&mut self, mut policy: impl FnMut(&DecisionRequest) -> usize) -> Result<HsMetrics> {
        while let Some(req) = self.advance()? {
            let a = policy(&req);
            self.apply(req.id, req.agent, a)?;
        }
        Ok(self.metrics())
    }

    pub fn metrics(&self) -> HsMetrics {
        let arrived: Vec<&Patient> = self.patients.iter().filter(|p| p.stage != Stage::NotArrived).collect();
        let treated = arrived.iter().filter(|p| p.treated).count();
        let waiting = arrived
            .iter()
            .filter(|p| {
                !p.treated
                    && matches!(
                        p.stage,
                        Stage::Registration
                            | Stage::AwaitingEscort(_)
                            | Stage::TriageService
                            | Stage::AwaitingRouting
                            | Stage::WardQueue(_)
                    )
            })
            .count();
        let routed: Vec<Routing> = arrived.iter().filter_map(|p| p.routing).collect();
        let pct = |r: Routing| {
            (!routed.is_empty()).then(|| 100.0 * routed.iter().filter(|x| **x == r).count() as f64 / routed.len() as f64)
        };
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        HsMetrics {
            arrived: arrived.len(),
            treated,
            waiting,
            in_progress: arrived.len() - treated - waiting,
            mean_escort_wait: mean(&self.escort_waits),
            mean_escort_travel: mean(&self.escort_travels),
            swing_moves: self.swing_moves,
            perfect_pct: pct(Routing::Perfect),
            backup_pct: pct(Routing::Backup),
            incorrect_pct: pct(Routing::Incorrect),
            patient_rewards: self.patients.iter().map(|p| p.accumulated_reward).collect(),
            patient_z: self.patients.iter().map(Patient::z).collect(),
            patient_priority: self.patients.iter().map(|p| p.priority.index()).collect(),
        }
    }

    /// Structural violations: lost or duplicated patients, double-booked
    /// staff or doctors, out-of-order events.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.time_violations > 0 {
            out.push(format!("{} events processed out of time order", self.time_violations));
        }
        let n = self.patients.len();
        let mut holders = vec![0usize; n];
        let mut mark = |p: usize| holders[p] += 1;
        self.clerks.queue.iter().chain(&self.clerks.serving).for_each(|&p| mark(p));
        self.dispatchers.queue.iter().chain(&self.dispatchers.serving).for_each(|&p| mark(p));
        self.routing_queue.iter().for_each(|&p| mark(p));
        self.escort_pending.iter().for_each(|r| mark(r.patient));
        self.ward_queues.iter().flatten().for_each(|&p| mark(p));
        for d in &self.doctors {
            if let Some(p) = d.busy_with {
                mark(p);
            }
        }
        let mut escorting = vec![0usize; n];
        for s in &self.staff {
            if let Some(p) = s.busy_with {
                escorting[p] += 1;
            }
        }
        for (pid, p) in self.patients.iter().enumerate() {
            let expected = match p.stage {
                Stage::NotArrived | Stage::Exited | Stage::Moving(_) => 0,
                Stage::AwaitingEscort(_) if escorting[pid] == 1 => 0,
                _ => 1,
            };
            // an escort-requested patient sits in the pending list until staff is dispatched
            let pending_event = matches!(p.stage, Stage::AwaitingEscort(_))
                && !self.escort_pending.iter().any(|r| r.patient == pid)
                && escorting[pid] == 0;
            if holders[pid] != expected && !(pending_event && holders[pid] == 0) {
                out.push(format!("patient {pid} in stage {:?} held {} times", p.stage, holders[pid]));
            }
            if escorting[pid] > 1 {
                out.push(format!("patient {pid} escorted by {} staff", escorting[pid]));
            }
        }
        let mut treating = vec![0usize; n];
        for d in &self.doctors {
            if let Some(p) = d.busy_with {
                treating[p] += 1;
            }
        }
        if let Some(p) = treating.iter().position(|&c| c > 1) {
            out.push(format!("patient {p} treated by several doctors"));
        }
        let m = self.metrics();
        if m.arrived != m.treated + m.in_progress + m.waiting {
            out.push("patient conservation violated".into());
        }
        out
    }
}

/// Operational and patient-outcome record of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsMetrics {
    pub arrived: usize,
    pub treated: usize,
    pub waiting: usize,
    pub in_progress: usize,
    pub mean_escort_wait: Option<f64>,
    pub mean_escort_travel: Option<f64>,
    pub swing_moves: usize,
    pub perfect_pct: Option<f64>,
    pub backup_pct: Option<f64>,
    pub incorrect_pct: Option<f64>,
    pub patient_rewards: Vec<f64>,
    pub patient_z: Vec<bool>,
    pub patient_priority: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_available(req: &DecisionRequest) -> usize {
        match req.agent {
            HsAgent::Triage => 0,
            HsAgent::Escort => 0,
            HsAgent::Doctor => WARDS,
        }
    }

    /// Routes each patient to its primary ward by reading the symptoms back.
    fn oracle_router(state: &HsState, req: &DecisionRequest) -> usize {
        match req.agent {
            HsAgent::Triage => state.patients[req.patient.unwrap()].illness.primary_ward().index(),
            _ => first_available(req),
        }
    }

    #[test]
    fn illness_tables() {
        assert_eq!(
            Illness::Cardio.symptoms(),
            &[Symptom::ChestPain, Symptom::ShortnessOfBreath, Symptom::HighBloodPressure]
        );
        assert_eq!(ward_weight(Illness::Cardio, Ward::AcuteCare), 1.0);
        assert_eq!(ward_weight(Illness::Cardio, Ward::PromptCare), 0.4);
        assert_eq!(classify(Illness::Cardio, Ward::PromptCare), Routing::Backup);
        assert_eq!(classify(Illness::Emergency, Ward::Imaging), Routing::Incorrect);
        for ill in Illness::ALL {
            let primaries = Ward::ALL.iter().filter(|w| ward_weight(ill, **w) == 1.0).count();
            assert_eq!(primaries, 1);
            assert!(ill.wards().iter().all(|(_, x)| *x > 0.0 && *x <= 1.0));
        }
    }

    #[test]
    fn impairment_speed_and_mobility() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = sample_patient(&mut rng);
            assert_eq!(p.speed, p.impairment.speed());
            assert_eq!(p.self_moving(), p.impairment == Impairment::None);
            assert_eq!(p.symptoms, p.illness.symptoms());
        }
        assert_eq!(Impairment::None.speed(), 75.0);
        assert_eq!(Impairment::Low.speed(), 60.0);
        assert_eq!(Impairment::High.speed(), 45.0);
    }

    #[test]
    fn arrivals() {
        let cfg = HsConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = sample_arrival_times(&mut rng, &cfg).unwrap();
        assert_eq!(t.len(), 60);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|&x| (0.0..720.0).contains(&x)));
        let bad = HsConfig { day_length_min: 0.0, peak_start_min: 0.0, peak_end_min: 0.0, ..cfg };
        assert!(sample_arrival_times(&mut rng, &bad).is_err());
    }

    #[test]
    fn empty_hospital_observations() {
        let s = hs_reset(&HsConfig::desk(), 3).unwrap();
        let o = s.triage_observe(0);
        assert_eq!(o.len(), TRIAGE_OBS);
        assert!(o[SYMPTOMS + 3..].iter().all(|&x| x == 0.0));
        let e = s.escort_observe();
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0, 1.0]);
        assert_eq!(s.doctor_observe().len(), DOCTOR_OBS);
    }

    #[test]
    fn pediatric_symptom_bits() {
        let mut s = hs_reset(&HsConfig::desk(), 3).unwrap();
        s.patients[0].illness = Illness::Pediatric;
        s.patients[0].symptoms = Illness::Pediatric.symptoms().to_vec();
        let o = s.triage_observe(0);
        let set: Vec<usize> = (0..SYMPTOMS).filter(|&i| o[i] == 1.0).collect();
        assert_eq!(set, vec![Symptom::IsChild as usize, Symptom::Fever as usize, Symptom::Cough as usize]);
    }

    #[test]
    fn mean_queue_priority_encoding() {
        let mut s = hs_reset(&HsConfig::desk(), 3).unwrap();
        s.patients[0].priority = Priority::High;
        s.patients[1].priority = Priority::Low;
        s.ward_queues[2].extend([0, 1]);
        assert_eq!(s.mean_queue_priority(2), 2.0);
        assert_eq!(s.mean_queue_priority(3), 0.0);
    }

    #[test]
    fn impaired_patient_requests_escort_after_registration() {
        let mut s = hs_reset(&HsConfig::desk(), 5).unwrap();
        let pid = s.patients.iter().position(|p| !p.self_moving()).unwrap();
        while s.patients[pid].stage == Stage::NotArrived || s.patients[pid].stage == Stage::Registration {
            let req = s.advance().unwrap().unwrap();
            let a = oracle_router(&s, &req);
            s.apply(req.id, req.agent, a).unwrap();
        }
        assert!(matches!(s.patients[pid].stage, Stage::AwaitingEscort(Location::Triage)));
        let queued = s.events.iter().any(|e| e.kind == EventKind::EscortRequest { patient: pid, to: Location::Triage });
        let raised = s.escort_pending.iter().any(|r| r.patient == pid) || s.staff.iter().any(|x| x.busy_with == Some(pid));
        assert!(queued || raised);
    }

    #[test]
    fn escorted_move_uses_slower_pace() {
        let mut s = hs_reset(&HsConfig::desk(), 5).unwrap();
        let pid = 0;
        s.patients[pid].impairment = Impairment::High;
        s.patients[pid].speed = 45.0;
        s.patients[pid].location = Location::Entrance;
        s.patients[pid].stage = Stage::AwaitingEscort(Location::Triage);
        s.escort_pending.push(EscortRequestEntry { patient: pid, since: 0.0, to: Location::Triage });
        let nurse = 0;
        s.escort_apply(pid, nurse).unwrap();
        assert!(s.escort_apply(pid, nurse).is_err());
        s.process(EventKind::EscortAssigned { patient: pid, staff: nurse });
        let d = s.cfg.distance(Location::Entrance, Location::Triage);
        assert_eq!(*s.escort_travels.last().unwrap(), d / 45.0);
    }

    #[test]
    fn escort_reward_ordering() {
        let base = hs_reset(&HsConfig::desk(), 5).unwrap();
        let setup = |since: f64| {
            let mut s = base.clone();
            s.patients[0].priority = Priority::High;
            s.patients[0].stage = Stage::AwaitingEscort(Location::Triage);
            s.escort_pending.push(EscortRequestEntry { patient: 0, since, to: Location::Triage });
            s.now = 10.0;
            s
        };
        let nurse = setup(10.0).escort_apply(0, 0).unwrap();
        let robot_id = base.staff.iter().position(|s| s.kind == StaffKind::Robot).unwrap();
        let robot = setup(10.0).escort_apply(0, robot_id).unwrap();
        assert!(nurse > robot);
        let late = setup(2.0).escort_apply(0, 0).unwrap();
        assert!(late < nurse);
        let mut busy = setup(10.0);
        busy.staff[0].busy_with = Some(7);
        assert!(matches!(busy.escort_apply(0, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn doctor_allocation() {
        let mut s = hs_reset(&HsConfig::desk(), 5).unwrap();
        let current = s.swing_allocation();
        assert_eq!(s.doctor_apply(&current).unwrap(), 0);
        let mut all = [0; WARDS];
        all[1] = 4;
        let before = s.available_doctor_share(1);
        let moves = s.doctor_apply(&all).unwrap();
        assert_eq!(moves, 4 - current[1]);
        assert_eq!(s.swing_allocation(), all);
        // travelling doctors are not yet available
        assert!(s.available_doctor_share(1) < 1.0);
        let mut t = 0.0;
        while let Some(ev) = s.events.peek().copied() {
            if !matches!(ev.kind, EventKind::DoctorArrived { .. }) && ev.time > t + 50.0 {
                break;
            }
            t = ev.time;
            let ev = s.events.pop().unwrap();
            s.now = ev.time;
            s.process(ev.kind);
            if s.doctors.iter().all(|d| d.present.is_some()) {
                break;
            }
        }
        assert!(s.available_doctor_share(1) >= before);
        assert_eq!(s.available_doctor_share(1), 1.0);
        assert!(matches!(s.doctor_apply(&[5, 0, 0, 0, 0, 0]), Err(Error::Validation(_))));
    }

    #[test]
    fn stale_decisions_are_rejected() {
        let mut s = hs_reset(&HsConfig::desk(), 5).unwrap();
        let req = s.advance().unwrap().unwrap();
        assert!(matches!(s.advance(), Err(Error::Sequencing(_))));
        assert!(matches!(s.apply(req.id + 1, req.agent, 0), Err(Error::Sequencing(_))));
        s.apply(req.id, req.agent, first_available(&req)).unwrap();
        assert!(matches!(s.apply(req.id, req.agent, 0), Err(Error::Sequencing(_))));
    }

    #[test]
    fn full_day_invariants_and_determinism() {
        let cfg = HsConfig::desk();
        let run = |seed: u64| {
            let mut s = hs_reset(&cfg, seed).unwrap();
            let mut violations = Vec::new();
            while let Some(req) = s.advance().unwrap() {
                violations.extend(s.check_invariants());
                let a = oracle_router(&s, &req);
                s.apply(req.id, req.agent, a).unwrap();
            }
            violations.extend(s.check_invariants());
            (s.metrics(), violations)
        };
        let (m, v) = run(11);
        assert!(v.is_empty(), "{v:?}");
        assert_eq!(m.arrived, 60);
        assert!(m.treated > 30, "treated {}", m.treated);
        assert_eq!(m.perfect_pct, Some(100.0));
        let sum = m.perfect_pct.unwrap() + m.backup_pct.unwrap() + m.incorrect_pct.unwrap();
        assert!((sum - 100.0).abs() < 0.01);
        assert_eq!(run(11).0, m);
    }

    #[test]
    fn zero_patient_day() {
        let cfg = HsConfig { patients_per_day: 0, ..HsConfig::desk() };
        let mut s = hs_reset(&cfg, 1).unwrap();
        let m = s.run_with(|r| first_available(r)).unwrap();
        assert_eq!((m.arrived, m.treated), (0, 0));
        assert_eq!(m.perfect_pct, None);
        assert_eq!(m.mean_escort_wait, None);
    }

    #[test]
    fn counterfactual_flip() {
        let s = hs_reset(&HsConfig::desk(), 4).unwrap();
        let f = s.flipped().unwrap();
        for (a, b) in s.patients.iter().zip(&f.patients) {
            assert_eq!(a.impairment.flipped(), b.impairment);
            assert_eq!(a.arrival_time, b.arrival_time);
            assert_eq!(b.speed, b.impairment.speed());
        }
    }
}
