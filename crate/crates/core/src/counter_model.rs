//! Counter events and how a request set is mapped onto a limited PMU.
//!
//! Five collection regimes are modelled: the four combinations of
//! multiplexing and grouping, plus weak groups. Regimes without
//! multiplexing split the request set into several passes, each of which is
//! a separate execution of the workload, so they require a repeatable
//! workload.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Hardware,
    Software,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSpec {
    /// Native event name, passed through to the backend untouched.
    pub name: String,
    pub kind: EventKind,
    /// Fixed-function counter index, if the event lives on one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_slot: Option<u32>,
    /// Programmable counters this event may be scheduled on. Empty means any.
    /// The default planner does not consult this; conflicts show up at run
    /// time as implicit multiplexing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed_counters: Vec<u32>,
}

impl EventSpec {
    pub fn hardware(name: impl Into<String>) -> Self {
        EventSpec {
            name: name.into(),
            kind: EventKind::Hardware,
            fixed_slot: None,
            allowed_counters: Vec::new(),
        }
    }

    pub fn software(name: impl Into<String>) -> Self {
        EventSpec {
            kind: EventKind::Software,
            ..EventSpec::hardware(name)
        }
    }

    pub fn fixed(name: impl Into<String>, slot: u32) -> Self {
        EventSpec {
            fixed_slot: Some(slot),
            ..EventSpec::hardware(name)
        }
    }

    /// Whether the event occupies a programmable counter.
    pub fn uses_budget(&self) -> bool {
        self.kind == EventKind::Hardware && self.fixed_slot.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventGroup {
    pub members: Vec<EventSpec>,
    #[serde(default)]
    pub weak: bool,
}

impl EventGroup {
    pub fn demand(&self) -> u32 {
        self.members.iter().filter(|e| e.uses_budget()).count() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterBudget {
    pub programmable: u32,
    #[serde(default)]
    pub fixed: u32,
}

impl CounterBudget {
    pub fn new(programmable: u32, fixed: u32) -> Result<Self, ScheduleError> {
        if programmable == 0 {
            return Err(ScheduleError::ZeroBudget);
        }
        Ok(CounterBudget {
            programmable,
            fixed,
        })
    }
}

impl Default for CounterBudget {
    /// Eight programmable counters, as on a Sandy Bridge core with HT off,
    /// plus three fixed-function counters.
    fn default() -> Self {
        CounterBudget {
            programmable: 8,
            fixed: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    GroupMultiplex,
    NogroupMultiplex,
    NomuxNogroup,
    NomuxGroup,
    WeakGroup,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::GroupMultiplex,
        Regime::NogroupMultiplex,
        Regime::NomuxNogroup,
        Regime::NomuxGroup,
        Regime::WeakGroup,
    ];

    pub fn multiplexes(self) -> bool {
        matches!(
            self,
            Regime::GroupMultiplex | Regime::NogroupMultiplex | Regime::WeakGroup
        )
    }

    pub fn groups(self) -> bool {
        matches!(
            self,
            Regime::GroupMultiplex | Regime::NomuxGroup | Regime::WeakGroup
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::GroupMultiplex => "group_multiplex",
            Regime::NogroupMultiplex => "nogroup_multiplex",
            Regime::NomuxNogroup => "nomux_nogroup",
            Regime::NomuxGroup => "nomux_group",
            Regime::WeakGroup => "weak_group",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s.replace('-', "_"))
            .ok_or_else(|| ScheduleError::UnknownRegime(s.to_string()))
    }
}

/// Whether counts can contradict each other, and whether every requested
/// event is guaranteed to be counted at some point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegimeSafety {
    pub safe: bool,
    pub complete: bool,
}

pub fn classify_regime_safety(regime: Regime) -> RegimeSafety {
    let (safe, complete) = match regime {
        // undersampling from multiplexing, scheduling conflicts inside groups
        Regime::GroupMultiplex => (false, false),
        // undersampled, but ungrouped events always find a counter
        Regime::NogroupMultiplex => (false, true),
        // implicit multiplexing can still resolve conflicting counters
        Regime::NomuxNogroup => (false, true),
        // grouping forbids implicit multiplexing; conflicts drop events
        Regime::NomuxGroup => (true, false),
        // broken groups fall back to multiplexing
        Regime::WeakGroup => (false, true),
    };
    RegimeSafety { safe, complete }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass {
    pub run_index: u32,
    pub groups: Vec<EventGroup>,
}

impl Pass {
    pub fn events(&self) -> impl Iterator<Item = &EventSpec> {
        self.groups.iter().flat_map(|g| g.members.iter())
    }

    pub fn demand(&self) -> u32 {
        self.groups.iter().map(EventGroup::demand).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub regime: Regime,
    pub passes: Vec<Pass>,
    pub counter_budget: u32,
    /// Set for multiplexing regimes: counts are scaled by enabled/running.
    pub extrapolated: bool,
}

impl Schedule {
    pub fn events(&self) -> impl Iterator<Item = &EventSpec> {
        self.passes.iter().flat_map(Pass::events)
    }

    pub fn event_names(&self) -> Vec<String> {
        self.events().map(|e| e.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("no events requested")]
    EmptyEventSet,
    #[error("regime {0} splits the event set into several executions and needs a repeatable workload")]
    RegimeRequiresRepeatableWorkload(Regime),
    #[error("counter budget must be at least one programmable counter")]
    ZeroBudget,
    #[error("event `{0}` requested twice")]
    DuplicateEvent(String),
    #[error("empty event name")]
    EmptyEventName,
    #[error("unknown regime `{0}`")]
    UnknownRegime(String),
    #[error("event list line {line}: {msg}")]
    EventList { line: usize, msg: String },
}

fn validate(events: &[EventSpec]) -> Result<(), ScheduleError> {
    if events.is_empty() {
        return Err(ScheduleError::EmptyEventSet);
    }
    let mut seen = BTreeSet::new();
    for e in events {
        if e.name.trim().is_empty() {
            return Err(ScheduleError::EmptyEventName);
        }
        if !seen.insert(e.name.as_str()) {
            return Err(ScheduleError::DuplicateEvent(e.name.clone()));
        }
    }
    Ok(())
}

/// First-fit partition in request order. Events that do not consume
/// programmable counters ride along with the first chunk.
fn first_fit(events: &[EventSpec], capacity: u32) -> Vec<Vec<EventSpec>> {
    let mut chunks: Vec<(u32, Vec<EventSpec>)> = Vec::new();
    let mut free_riders = Vec::new();
    for e in events {
        if !e.uses_budget() {
            free_riders.push(e.clone());
            continue;
        }
        match chunks.iter_mut().find(|(used, _)| *used < capacity) {
            Some((used, members)) => {
                *used += 1;
                members.push(e.clone());
            }
            None => chunks.push((1, vec![e.clone()])),
        }
    }
    if chunks.is_empty() {
        return vec![free_riders];
    }
    let mut out: Vec<Vec<EventSpec>> = chunks.into_iter().map(|(_, m)| m).collect();
    // keep request order inside the first chunk
    let mut first = free_riders;
    first.append(&mut out[0]);
    first.sort_by_key(|e| events.iter().position(|x| x.name == e.name));
    out[0] = first;
    out
}

pub fn plan_schedule(
    events: &[EventSpec],
    budget: CounterBudget,
    regime: Regime,
    repeatable_workload: bool,
) -> Result<Schedule, ScheduleError> {
    validate(events)?;
    if budget.programmable == 0 {
        return Err(ScheduleError::ZeroBudget);
    }
    if !regime.multiplexes() && !repeatable_workload {
        return Err(ScheduleError::RegimeRequiresRepeatableWorkload(regime));
    }
    let cap = budget.programmable;
    let passes = match regime {
        Regime::NomuxGroup => first_fit(events, cap)
            .into_iter()
            .enumerate()
            .map(|(i, members)| Pass {
                run_index: i as u32,
                groups: vec![EventGroup {
                    members,
                    weak: false,
                }],
            })
            .collect(),
        Regime::NomuxNogroup => first_fit(events, cap)
            .into_iter()
            .enumerate()
            .map(|(i, members)| Pass {
                run_index: i as u32,
                groups: members
                    .into_iter()
                    .map(|e| EventGroup {
                        members: vec![e],
                        weak: false,
                    })
                    .collect(),
            })
            .collect(),
        Regime::GroupMultiplex | Regime::WeakGroup => vec![Pass {
            run_index: 0,
            groups: first_fit(events, cap)
                .into_iter()
                .map(|members| EventGroup {
                    members,
                    weak: regime == Regime::WeakGroup,
                })
                .collect(),
        }],
        Regime::NogroupMultiplex => vec![Pass {
            run_index: 0,
            groups: events
                .iter()
                .map(|e| EventGroup {
                    members: vec![e.clone()],
                    weak: false,
                })
                .collect(),
        }],
    };
    Ok(Schedule {
        regime,
        passes,
        counter_budget: cap,
        extrapolated: regime.multiplexes(),
    })
}

/// Parses an event list: one `name[,kind]` per line, `#` starts a comment.
/// `kind` is `hardware` (default), `software`, or `fixed:<slot>`.
pub fn parse_event_list(text: &str) -> Result<Vec<EventSpec>, ScheduleError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let name = parts.next().unwrap_or("").trim();
        if name.is_empty() {
            return Err(ScheduleError::EventList {
                line: idx + 1,
                msg: "missing event name".into(),
            });
        }
        let spec = match parts.next().map(str::trim) {
            None | Some("") | Some("hardware") | Some("hw") => EventSpec::hardware(name),
            Some("software") | Some("sw") => EventSpec::software(name),
            Some(k) if k.starts_with("fixed") => {
                let slot = k
                    .trim_start_matches("fixed")
                    .trim_start_matches(':')
                    .parse()
                    .map_err(|_| ScheduleError::EventList {
                        line: idx + 1,
                        msg: format!("bad fixed slot in `{k}`"),
                    })?;
                EventSpec::fixed(name, slot)
            }
            Some(k) => {
                return Err(ScheduleError::EventList {
                    line: idx + 1,
                    msg: format!("unknown event kind `{k}`"),
                })
            }
        };
        out.push(spec);
    }
    validate(&out)?;
    Ok(out)
}
