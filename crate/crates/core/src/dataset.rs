//! Dataset manifests, label roles, and per-event training-set assembly.
//!
//! A manifest is a JSON-lines file. An optional first line
//! `{"events": [...]}` fixes the event order; every other line is one
//! [`VideoRecord`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Background,
    Test,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Positive,
    NearMiss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLabel {
    pub event: String,
    pub role: LabelRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    /// CNN feature file, relative to the feature directory.
    pub feature_path: String,
    pub duration_seconds: f64,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<EventLabel>,
    /// Low-level descriptor file for the Fisher-vector branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor_path: Option<String>,
    /// Object-proposal boxes for objectness pooling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_path: Option<String>,
}

impl VideoRecord {
    pub fn label_for(&self, event: &str) -> Option<LabelRole> {
        self.labels.iter().find(|l| l.event == event).map(|l| l.role)
    }

    pub fn is_positive_for(&self, event: &str) -> bool {
        self.label_for(event) == Some(LabelRole::Positive)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub events: Vec<String>,
    pub videos: Vec<VideoRecord>,
}

#[derive(Serialize, Deserialize)]
struct EventsLine {
    events: Vec<String>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut events = None;
        let mut videos = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::data(format!("manifest line {}: {e}", no + 1)))?;
            if value.get("events").is_some() && value.get("video_id").is_none() {
                if events.is_some() || !videos.is_empty() {
                    return Err(Error::data(format!(
                        "manifest line {}: events declaration must be the first record",
                        no + 1
                    )));
                }
                let decl: EventsLine = serde_json::from_value(value)
                    .map_err(|e| Error::data(format!("manifest line {}: {e}", no + 1)))?;
                events = Some(decl.events);
            } else {
                let rec: VideoRecord = serde_json::from_value(value)
                    .map_err(|e| Error::data(format!("manifest line {}: {e}", no + 1)))?;
                videos.push(rec);
            }
        }
        let events = events.unwrap_or_else(|| {
            videos
                .iter()
                .flat_map(|v| v.labels.iter().map(|l| l.event.clone()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        });
        Ok(DatasetManifest { events, videos })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::DataIntegrity(m) => Error::data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&EventsLine {
            events: self.events.clone(),
        })
        .expect("events serialize");
        out.push('\n');
        for v in &self.videos {
            out.push_str(&serde_json::to_string(v).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<String> {
        let mut ids: Vec<String> = self
            .videos
            .iter()
            .filter(|v| v.role == role)
            .map(|v| v.video_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Test ids with relevance for `event`, sorted by id.
    pub fn test_relevance(&self, event: &str) -> Vec<(String, bool)> {
        let mut out: Vec<(String, bool)> = self
            .videos
            .iter()
            .filter(|v| v.role == Role::Test)
            .map(|v| (v.video_id.clone(), v.is_positive_for(event)))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTrainingSet {
    pub event: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl EventTrainingSet {
    /// Ids and labels, positives first, each block sorted.
    pub fn labeled_ids(&self) -> Vec<(String, bool)> {
        self.positives
            .iter()
            .map(|id| (id.clone(), true))
            .chain(self.negatives.iter().map(|id| (id.clone(), false)))
            .collect()
    }
}

/// Positives of `event` against background plus its near-misses. Any video
/// carrying a label for a different event is left out entirely.
pub fn assemble_event_training_set(manifest: &DatasetManifest, event: &str) -> Result<EventTrainingSet> {
    if !manifest.events.iter().any(|e| e == event) {
        return Err(Error::invalid(format!("unknown event '{event}'")));
    }
    let mut positives = BTreeSet::new();
    let mut negatives = BTreeSet::new();
    for v in &manifest.videos {
        if v.labels.iter().any(|l| l.event != event) {
            continue;
        }
        match (v.role, v.label_for(event)) {
            (Role::Background, _) => {
                negatives.insert(v.video_id.clone());
            }
            (Role::Train, Some(LabelRole::Positive)) => {
                positives.insert(v.video_id.clone());
            }
            (Role::Train, Some(LabelRole::NearMiss)) => {
                negatives.insert(v.video_id.clone());
            }
            _ => {}
        }
    }
    if positives.is_empty() {
        return Err(Error::invalid(format!("event '{event}' has no usable positives")));
    }
    Ok(EventTrainingSet {
        event: event.to_string(),
        positives: positives.into_iter().collect(),
        negatives: negatives.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateId,
    RoleConflict,
    UndeclaredEvent,
    DuplicateEvent,
    LabeledBackground,
    ConflictingLabels,
    BadDuration,
    EmptyId,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::DuplicateId => "duplicate video id",
            Rule::RoleConflict => "video listed under more than one role",
            Rule::UndeclaredEvent => "label names an undeclared event",
            Rule::DuplicateEvent => "event declared twice",
            Rule::LabeledBackground => "background video carries event labels",
            Rule::ConflictingLabels => "video labeled twice for one event",
            Rule::BadDuration => "duration must be finite and non-negative",
            Rule::EmptyId => "empty video id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub id: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.rule)
    }
}

pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut declared = BTreeSet::new();
    for e in &manifest.events {
        if !declared.insert(e.as_str()) {
            out.push(Violation { id: e.clone(), rule: Rule::DuplicateEvent });
        }
    }

    let mut by_id: BTreeMap<&str, Vec<&VideoRecord>> = BTreeMap::new();
    for v in &manifest.videos {
        by_id.entry(v.video_id.as_str()).or_default().push(v);
    }
    for (id, recs) in &by_id {
        if recs.len() > 1 {
            let roles: BTreeSet<Role> = recs.iter().map(|r| r.role).collect();
            let rule = if roles.len() > 1 { Rule::RoleConflict } else { Rule::DuplicateId };
            out.push(Violation { id: id.to_string(), rule });
        }
    }

    for v in &manifest.videos {
        let id = v.video_id.clone();
        if v.video_id.is_empty() {
            out.push(Violation { id: id.clone(), rule: Rule::EmptyId });
        }
        if !(v.duration_seconds >= 0.0 && v.duration_seconds.is_finite()) {
            out.push(Violation { id: id.clone(), rule: Rule::BadDuration });
        }
        if v.role == Role::Background && !v.labels.is_empty() {
            out.push(Violation { id: id.clone(), rule: Rule::LabeledBackground });
        }
        let mut seen = BTreeSet::new();
        for l in &v.labels {
            if !declared.contains(l.event.as_str()) {
                out.push(Violation { id: id.clone(), rule: Rule::UndeclaredEvent });
            }
            if !seen.insert(l.event.as_str()) {
                out.push(Violation { id: id.clone(), rule: Rule::ConflictingLabels });
            }
        }
    }
    out.sort_by(|a, b| (&a.id, a.rule).cmp(&(&b.id, b.rule)));
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, role: Role, labels: &[(&str, LabelRole)]) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            feature_path: format!("{id}.vfea"),
            duration_seconds: 30.0,
            role,
            labels: labels
                .iter()
                .map(|(e, r)| EventLabel { event: e.to_string(), role: *r })
                .collect(),
            descriptor_path: None,
            proposal_path: None,
        }
    }

    fn sample() -> DatasetManifest {
        use LabelRole::*;
        DatasetManifest {
            events: vec!["e1".into(), "e2".into()],
            videos: vec![
                rec("p1", Role::Train, &[("e1", Positive)]),
                rec("p2", Role::Train, &[("e1", Positive)]),
                rec("n1", Role::Train, &[("e1", NearMiss)]),
                rec("v", Role::Train, &[("e2", Positive)]),
                rec("m2", Role::Train, &[("e2", NearMiss)]),
                rec("b1", Role::Background, &[]),
                rec("b2", Role::Background, &[]),
                rec("t1", Role::Test, &[("e1", Positive)]),
                rec("t2", Role::Test, &[]),
            ],
        }
    }

    #[test]
    fn other_event_labels_are_excluded() {
        let m = sample();
        let s = assemble_event_training_set(&m, "e1").unwrap();
        assert_eq!(s.positives, vec!["p1", "p2"]);
        assert_eq!(s.negatives, vec!["b1", "b2", "n1"]);
        let s2 = assemble_event_training_set(&m, "e2").unwrap();
        assert_eq!(s2.positives, vec!["v"]);
        assert_eq!(s2.negatives, vec!["b1", "b2", "m2"]);
    }

    #[test]
    fn single_event_negatives() {
        let mut m = sample();
        m.videos.retain(|v| !v.labels.iter().any(|l| l.event == "e2"));
        m.events = vec!["e1".into()];
        let s = assemble_event_training_set(&m, "e1").unwrap();
        assert_eq!(s.negatives, vec!["b1", "b2", "n1"]);
    }

    #[test]
    fn multi_event_positive_is_dropped_from_both() {
        let mut m = sample();
        m.videos.push(rec(
            "both",
            Role::Train,
            &[("e1", LabelRole::Positive), ("e2", LabelRole::Positive)],
        ));
        for e in ["e1", "e2"] {
            let s = assemble_event_training_set(&m, e).unwrap();
            assert!(!s.positives.contains(&"both".to_string()));
            assert!(!s.negatives.contains(&"both".to_string()));
        }
    }

    #[test]
    fn assemble_errors() {
        let m = sample();
        assert!(assemble_event_training_set(&m, "e9").is_err());
        let mut m2 = sample();
        m2.events.push("e3".into());
        assert!(assemble_event_training_set(&m2, "e3").is_err());
    }

    #[test]
    fn validation() {
        assert!(validate_manifest(&sample()).is_empty());

        let mut m = sample();
        m.videos.push(rec("b1", Role::Test, &[]));
        let v = validate_manifest(&m);
        assert_eq!(v, vec![Violation { id: "b1".into(), rule: Rule::RoleConflict }]);

        let mut m = sample();
        m.videos.push(rec("p1", Role::Train, &[("e1", LabelRole::Positive)]));
        let v = validate_manifest(&m);
        assert_eq!(v, vec![Violation { id: "p1".into(), rule: Rule::DuplicateId }]);

        let mut m = sample();
        m.videos.push(rec("x", Role::Background, &[("e7", LabelRole::Positive)]));
        let rules: Vec<Rule> = validate_manifest(&m).into_iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::UndeclaredEvent, Rule::LabeledBackground]);
    }

    #[test]
    fn jsonl_round_trip() {
        let m = sample();
        let text = m.to_jsonl();
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        let inferred = DatasetManifest::parse(&body).unwrap();
        assert_eq!(inferred.events, vec!["e1", "e2"]);
        assert!(DatasetManifest::parse("{\"video_id\": 3}").is_err());
    }

    #[test]
    fn relevance_for_test_rows() {
        let m = sample();
        assert_eq!(
            m.test_relevance("e1"),
            vec![("t1".to_string(), true), ("t2".to_string(), false)]
        );
    }

    proptest! {
        #[test]
        fn row_order_is_irrelevant(perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()) {
            let m = sample();
            let shuffled = DatasetManifest {
                events: m.events.clone(),
                videos: perm.iter().map(|&i| m.videos[i].clone()).collect(),
            };
            for e in ["e1", "e2"] {
                prop_assert_eq!(
                    assemble_event_training_set(&m, e).unwrap(),
                    assemble_event_training_set(&shuffled, e).unwrap()
                );
            }
        }

        #[test]
        fn positives_never_train_other_events(
            labels in prop::collection::vec(prop::collection::vec((0usize..3, any::<bool>()), 0..3), 1..25)
        ) {
            let events = ["a", "b", "c"];
            let mut m = DatasetManifest { events: events.iter().map(|e| e.to_string()).collect(), videos: vec![] };
            for (i, ls) in labels.iter().enumerate() {
                let mut r = rec(&format!("v{i}"), Role::Train, &[]);
                for &(e, pos) in ls {
                    if r.labels.iter().all(|l| l.event != events[e]) {
                        r.labels.push(EventLabel {
                            event: events[e].into(),
                            role: if pos { LabelRole::Positive } else { LabelRole::NearMiss },
                        });
                    }
                }
                m.videos.push(r);
            }
            m.videos.push(rec("bg", Role::Background, &[]));
            for e in events {
                let Ok(se) = assemble_event_training_set(&m, e) else { continue };
                for f in events.iter().filter(|f| **f != e) {
                    let Ok(sf) = assemble_event_training_set(&m, f) else { continue };
                    for p in &se.positives {
                        prop_assert!(!sf.positives.contains(p) && !sf.negatives.contains(p));
                    }
                }
            }
        }
    }
}
