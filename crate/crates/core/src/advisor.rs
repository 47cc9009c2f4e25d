//! Decision trees that pick a platform mode and, for AppDirect space, a
//! usage strategy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{ApplicationProfile, IoPattern, Modifiable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    MemoryMode,
    AppDirectMode,
    Mixed,
    NoBapmNeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Fsdax,
    DistributedEphemeralFs,
    DirectAccess,
}

/// One question asked while walking a tree, with the answer taken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub question: String,
    pub answer: String,
    /// Profile field the answer was read from.
    pub field: String,
}

impl Step {
    fn new(question: &str, answer: impl Into<String>, field: &str) -> Self {
        Step {
            question: question.into(),
            answer: answer.into(),
            field: field.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub platform: Platform,
    pub strategy: Option<Strategy>,
    pub rationale: Vec<Step>,
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::MemoryMode => "MemoryMode",
            Platform::AppDirectMode => "AppDirect",
            Platform::Mixed => "Mixed",
            Platform::NoBapmNeeded => "NoBapmNeeded",
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Fsdax => "Fsdax",
            Strategy::DistributedEphemeralFs => "DistributedEphemeralFs",
            Strategy::DirectAccess => "DirectAccess",
        })
    }
}

impl fmt::Display for Recommendation {
    /// `MemoryMode`, `AppDirect + Fsdax`, `Mixed + DirectAccess`, ...
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Some(s) => write!(f, "{} + {s}", self.platform),
            None => write!(f, "{}", self.platform),
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Platform-mode tree: memory pressure and I/O pressure decide the mode.
pub fn recommend_platform_mode(profile: &ApplicationProfile) -> (Platform, Vec<Step>) {
    let mem = profile.memory_intensive;
    let io = profile.io_intensive;
    let mut trail = vec![
        Step::new("Is the application memory intensive?", yes_no(mem), "memory_intensive"),
        Step::new("Is the application I/O intensive?", yes_no(io), "io_intensive"),
    ];
    let platform = match (mem, io) {
        (true, false) => Platform::MemoryMode,
        (false, true) => Platform::AppDirectMode,
        (true, true) => Platform::Mixed,
        (false, false) => {
            trail.push(Step::new(
                "Does either resource need B-APM?",
                "no (leaf added by this tool; the trees assume some pressure)",
                "memory_intensive",
            ));
            Platform::NoBapmNeeded
        }
    };
    (platform, trail)
}

/// AppDirect usage tree.
///
/// `Undesirable` modification follows the no-modification branch.
pub fn recommend_appdirect_strategy(profile: &ApplicationProfile) -> Result<(Strategy, Vec<Step>)> {
    let pattern = match profile.io_pattern {
        IoPattern::None => return Err(Error::PatternRequired),
        p => p,
    };
    let pattern_name = match pattern {
        IoPattern::Local => "local",
        IoPattern::Global => "global",
        IoPattern::Mixed => "local + global",
        IoPattern::None => unreachable!(),
    };
    let mut trail = vec![Step::new("What is the I/O pattern?", pattern_name, "io_pattern")];
    if pattern == IoPattern::Local {
        return Ok((Strategy::Fsdax, trail));
    }
    let modifiable = match profile.modifiable {
        Modifiable::Yes => "yes",
        Modifiable::Undesirable => "undesirable (treated as no)",
        Modifiable::No => "no",
    };
    trail.push(Step::new("Can the application be modified?", modifiable, "modifiable"));
    if profile.modifiable != Modifiable::Yes {
        return Ok((Strategy::DistributedEphemeralFs, trail));
    }
    trail.push(Step::new(
        "Is optimal I/O performance required?",
        yes_no(profile.io_perf_critical),
        "io_perf_critical",
    ));
    let strategy = if profile.io_perf_critical {
        Strategy::DirectAccess
    } else {
        Strategy::DistributedEphemeralFs
    };
    Ok((strategy, trail))
}

/// Walks both trees. Only AppDirect and mixed setups get a strategy.
pub fn recommend(profile: &ApplicationProfile) -> Result<Recommendation> {
    let (platform, mut rationale) = recommend_platform_mode(profile);
    let strategy = match platform {
        Platform::AppDirectMode | Platform::Mixed => {
            let (s, trail) = recommend_appdirect_strategy(profile)?;
            rationale.extend(trail);
            Some(s)
        }
        Platform::MemoryMode | Platform::NoBapmNeeded => None,
    };
    Ok(Recommendation {
        platform,
        strategy,
        rationale,
    })
}
