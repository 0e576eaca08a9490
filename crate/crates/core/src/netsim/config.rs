use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    synth_profile, CellId, ProfileKind, RrcParams, SignalingKind, SimError, TariffTable, UeId, UeState,
};
use crate::attacks::{self, AttackKind, AttackParams, AttackSpec, ScheduledStimulus};
use crate::Error;

/// Scenario configuration file (TOML). See `configs/scenario.toml` in the
/// repository for an annotated copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon_s: f64,
    pub cells: u32,
    pub cdr_hash_key: String,
    /// Width of the station occupancy sampling interval.
    pub stats_interval_s: f64,
    /// Emit ATTACH at t=0 and DETACH at the horizon for every UE.
    pub attach_detach: bool,
    pub rrc: RrcParams,
    pub tariffs: TariffTable,
    pub ue_groups: Vec<UeGroupConfig>,
    pub stations: Vec<StationSpec>,
    pub routing: RoutingConfig,
    pub attacks: Vec<AttackConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon_s: 3600.0,
            cells: 1,
            cdr_hash_key: "nemesys".into(),
            stats_interval_s: 60.0,
            attach_detach: true,
            rrc: RrcParams::default(),
            tariffs: TariffTable::default(),
            ue_groups: vec![UeGroupConfig::default()],
            stations: vec![StationSpec { id: "core".into(), service_rate: 500.0, next: None }],
            routing: RoutingConfig::default(),
            attacks: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::MalformedConfig(e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serialises")
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].lines().count().max(1);
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UeGroupConfig {
    pub count: u32,
    pub profile: String,
    /// Seed for the diurnal shape; defaults to the scenario seed.
    pub profile_seed: Option<u64>,
    /// Overrides the profile's default sessions per hour.
    pub session_rate: Option<f64>,
}

impl Default for UeGroupConfig {
    fn default() -> Self {
        Self { count: 1, profile: "WEB".into(), profile_seed: None, session_rate: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: String,
    /// Messages per second.
    pub service_rate: f64,
    /// Downstream station receiving this station's completions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
}

/// Signaling kind → entry station.
pub type RoutingConfig = BTreeMap<String, String>;

/// Attack entry of the scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub start_s: f64,
    pub stop_s: f64,
    #[serde(default)]
    pub bot_ids: Vec<UeId>,
    /// Index into `ue_groups`; every UE of that group becomes a bot.
    #[serde(default)]
    pub bot_group: Option<usize>,
    #[serde(default)]
    pub params: AttackParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: f64,
    pub cells: u32,
    pub ues: Vec<UeState>,
    pub rrc: RrcParams,
    pub stations: Vec<StationSpec>,
    pub routing: BTreeMap<SignalingKind, String>,
    pub attacks: Vec<AttackSpec>,
    /// Attack stimuli, sorted by time.
    pub scheduled: Vec<ScheduledStimulus>,
    pub cdr_hash_key: String,
    pub tariffs: TariffTable,
    pub stats_interval: f64,
    pub attach_detach: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| SimError::MalformedConfig(m.to_string());
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad("horizon_s must be > 0"));
        }
        if !(self.stats_interval > 0.0) {
            return Err(bad("stats_interval_s must be > 0"));
        }
        if self.cells == 0 {
            return Err(bad("cells must be >= 1"));
        }
        if self.ues.is_empty() {
            return Err(bad("scenario needs at least one UE"));
        }
        if self.stations.is_empty() {
            return Err(bad("scenario needs at least one station"));
        }
        self.rrc.validate()?;
        let mut ids = BTreeSet::new();
        for ue in &self.ues {
            if !ids.insert(ue.ue_id) {
                return Err(SimError::MalformedConfig(format!("duplicate ue id {}", ue.ue_id)));
            }
            ue.profile.validate()?;
        }
        for kind in SignalingKind::ALL {
            if !self.routing.contains_key(&kind) {
                return Err(SimError::UnroutedEventKind(kind));
            }
        }
        self.station_order()?;
        Ok(())
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Stations in an order where every station precedes its `next`.
    pub fn station_order(&self) -> Result<Vec<usize>, SimError> {
        let mut seen = BTreeSet::new();
        for s in &self.stations {
            if !(s.service_rate > 0.0 && s.service_rate.is_finite()) {
                return Err(SimError::MalformedConfig(format!("station {}: service_rate must be > 0", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(SimError::MalformedConfig(format!("duplicate station id {}", s.id)));
            }
        }
        let n = self.stations.len();
        let mut indegree = vec![0usize; n];
        let mut next = vec![None; n];
        for (i, s) in self.stations.iter().enumerate() {
            if let Some(target) = &s.next {
                let j = self.station_index(target).ok_or_else(|| {
                    SimError::MalformedConfig(format!("station {}: unknown next station {target}", s.id))
                })?;
                next[i] = Some(j);
                indegree[j] += 1;
            }
        }
        for (kind, target) in &self.routing {
            if self.station_index(target).is_none() {
                return Err(SimError::MalformedConfig(format!("routing {kind}: unknown station {target}")));
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
        while let Some(i) = ready.pop() {
            order.push(i);
            if let Some(j) = next[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if order.len() != n {
            return Err(SimError::MalformedConfig("station routing contains a cycle".into()));
        }
        Ok(order)
    }

    pub fn ue(&self, id: UeId) -> Option<&UeState> {
        self.ues.iter().find(|u| u.ue_id == id)
    }
}

/// Resolves a configuration into a runnable scenario, applying its attacks.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario, Error> {
    let mut ues = Vec::new();
    let mut groups: Vec<Vec<UeId>> = Vec::new();
    for group in &config.ue_groups {
        let kind: ProfileKind = group.profile.parse()?;
        let mut profile = synth_profile(kind, group.profile_seed.unwrap_or(config.seed));
        if let Some(rate) = group.session_rate {
            profile.session_rate = rate;
        }
        let mut members = Vec::new();
        for _ in 0..group.count {
            let id = UeId(ues.len() as u32);
            let cell = CellId(id.0 % config.cells.max(1));
            ues.push(UeState::new(id, cell, profile.clone()));
            members.push(id);
        }
        groups.push(members);
    }

    let mut routing = BTreeMap::new();
    if config.routing.is_empty() && config.stations.len() == 1 {
        for kind in SignalingKind::ALL {
            routing.insert(kind, config.stations[0].id.clone());
        }
    } else {
        for (kind, station) in &config.routing {
            let kind: SignalingKind =
                kind.parse().map_err(|e: String| SimError::MalformedConfig(format!("routing: {e}")))?;
            routing.insert(kind, station.clone());
        }
    }

    let mut scenario = Scenario {
        seed: config.seed,
        horizon: config.horizon_s,
        cells: config.cells,
        ues,
        rrc: config.rrc.clone(),
        stations: config.stations.clone(),
        routing,
        attacks: Vec::new(),
        scheduled: Vec::new(),
        cdr_hash_key: config.cdr_hash_key.clone(),
        tariffs: config.tariffs.clone(),
        stats_interval: config.stats_interval_s,
        attach_detach: config.attach_detach,
    };
    scenario.validate()?;

    for (i, a) in config.attacks.iter().enumerate() {
        let mut bots: BTreeSet<UeId> = a.bot_ids.iter().copied().collect();
        if let Some(g) = a.bot_group {
            let members = groups
                .get(g)
                .ok_or_else(|| SimError::MalformedConfig(format!("attacks[{i}]: no ue group {g}")))?;
            bots.extend(members.iter().copied());
        }
        let spec = AttackSpec {
            kind: a.kind,
            start: a.start_s,
            stop: a.stop_s,
            bot_ids: bots,
            params: a.params.clone(),
        };
        scenario = attacks::apply_attack(&scenario, spec)?;
    }
    Ok(scenario)
}
