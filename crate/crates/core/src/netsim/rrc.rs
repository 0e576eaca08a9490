use serde::{Deserialize, Serialize};

use super::{CellId, SignalingEvent, SignalingKind, SimError, TrafficProfile, UeId};

/// Costs and timers of the 3-state RRC machine.
///
/// `attach_cost`, `detach_cost` and `paging_cost` price the NAS-level events
/// the simulator emits outside the RRC machine itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrcParams {
    pub promote_i2f_cost: u32,
    pub promote_f2d_cost: u32,
    pub demote_d2f_cost: u32,
    pub demote_f2i_cost: u32,
    pub attach_cost: u32,
    pub detach_cost: u32,
    pub paging_cost: u32,
    /// FACH buffer volume (bytes) above which the UE is promoted to DCH.
    pub dch_volume_threshold: u64,
    pub t_dch_inactivity: f64,
    pub t_fach_inactivity: f64,
}

impl Default for RrcParams {
    fn default() -> Self {
        Self {
            promote_i2f_cost: 3,
            promote_f2d_cost: 2,
            demote_d2f_cost: 2,
            demote_f2i_cost: 2,
            attach_cost: 5,
            detach_cost: 2,
            paging_cost: 1,
            dch_volume_threshold: 1000,
            t_dch_inactivity: 5.0,
            t_fach_inactivity: 12.0,
        }
    }
}

impl RrcParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let costs = [
            self.promote_i2f_cost,
            self.promote_f2d_cost,
            self.demote_d2f_cost,
            self.demote_f2i_cost,
            self.attach_cost,
            self.detach_cost,
            self.paging_cost,
        ];
        if costs.iter().any(|&c| c < 1) {
            return Err(SimError::InvalidParams("rrc costs must be >= 1".into()));
        }
        if !(self.t_dch_inactivity > 0.0 && self.t_fach_inactivity > 0.0) {
            return Err(SimError::InvalidParams("rrc timers must be > 0".into()));
        }
        if self.dch_volume_threshold == 0 {
            return Err(SimError::InvalidParams("dch_volume_threshold must be > 0".into()));
        }
        Ok(())
    }

    pub fn cost(&self, kind: SignalingKind) -> u32 {
        match kind {
            SignalingKind::Attach => self.attach_cost,
            SignalingKind::Detach => self.detach_cost,
            SignalingKind::PromoteI2F => self.promote_i2f_cost,
            SignalingKind::PromoteF2D => self.promote_f2d_cost,
            SignalingKind::DemoteD2F => self.demote_d2f_cost,
            SignalingKind::DemoteF2I => self.demote_f2i_cost,
            SignalingKind::Paging => self.paging_cost,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RrcState {
    Idle,
    Fach,
    Dch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub ue_id: UeId,
    pub cell_id: CellId,
    pub rrc: RrcState,
    /// Time of the last data arrival or RRC transition.
    pub last_activity_ts: f64,
    /// Bytes buffered while on FACH; flushed on promotion to DCH or release.
    pub pending_bytes: u64,
    pub profile: TrafficProfile,
    pub infected: bool,
}

impl UeState {
    pub fn new(ue_id: UeId, cell_id: CellId, profile: TrafficProfile) -> Self {
        Self {
            ue_id,
            cell_id,
            rrc: RrcState::Idle,
            last_activity_ts: 0.0,
            pending_bytes: 0,
            profile,
            infected: false,
        }
    }

    /// Time at which the current state's inactivity timer fires, if any.
    pub fn next_deadline(&self, params: &RrcParams) -> Option<f64> {
        match self.rrc {
            RrcState::Idle => None,
            RrcState::Fach => Some(self.last_activity_ts + params.t_fach_inactivity),
            RrcState::Dch => Some(self.last_activity_ts + params.t_dch_inactivity),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stimulus {
    DataArrival { at: f64, bytes: u64 },
    TimerTick { now: f64 },
}

impl Stimulus {
    pub fn time(&self) -> f64 {
        match *self {
            Stimulus::DataArrival { at, .. } => at,
            Stimulus::TimerTick { now } => now,
        }
    }
}

/// Applies one stimulus to a UE.
///
/// Timers that expired before the stimulus time are processed first, each
/// demotion stamped with its own expiry time, so the function is total and
/// insensitive to how often the caller ticks. A timer fires once the clock
/// reaches `last_activity_ts + timeout`.
pub fn rrc_step(ue: &UeState, stimulus: Stimulus, params: &RrcParams) -> (UeState, Vec<SignalingEvent>) {
    let mut next = ue.clone();
    let mut events = Vec::new();
    let now = stimulus.time().max(ue.last_activity_ts);

    expire_timers(&mut next, now, params, &mut events);

    if let Stimulus::DataArrival { bytes, .. } = stimulus {
        match next.rrc {
            RrcState::Idle => {
                emit(&next, now, SignalingKind::PromoteI2F, params, &mut events);
                next.rrc = RrcState::Fach;
                next.pending_bytes = bytes;
            }
            RrcState::Fach => next.pending_bytes = next.pending_bytes.saturating_add(bytes),
            RrcState::Dch => {}
        }
        if next.rrc == RrcState::Fach && next.pending_bytes > params.dch_volume_threshold {
            emit(&next, now, SignalingKind::PromoteF2D, params, &mut events);
            next.rrc = RrcState::Dch;
            next.pending_bytes = 0;
        }
        next.last_activity_ts = now;
    }
    (next, events)
}

fn expire_timers(ue: &mut UeState, now: f64, params: &RrcParams, events: &mut Vec<SignalingEvent>) {
    if ue.rrc == RrcState::Dch {
        let deadline = ue.last_activity_ts + params.t_dch_inactivity;
        if now >= deadline {
            emit(ue, deadline, SignalingKind::DemoteD2F, params, events);
            ue.rrc = RrcState::Fach;
            ue.last_activity_ts = deadline;
            ue.pending_bytes = 0;
        }
    }
    if ue.rrc == RrcState::Fach {
        let deadline = ue.last_activity_ts + params.t_fach_inactivity;
        if now >= deadline {
            emit(ue, deadline, SignalingKind::DemoteF2I, params, events);
            ue.rrc = RrcState::Idle;
            ue.last_activity_ts = deadline;
            ue.pending_bytes = 0;
        }
    }
}

fn emit(ue: &UeState, ts: f64, kind: SignalingKind, params: &RrcParams, out: &mut Vec<SignalingEvent>) {
    out.push(SignalingEvent { ts, ue_id: ue.ue_id, kind, cell_id: ue.cell_id, cost: params.cost(kind) });
}
