//! Scripted description backend keyed on behavior tags.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Capabilities, DescribeBackend, DescribeError, DescribeRequest};
use crate::backend::BackendError;

/// Behaviors seen in nominal training footage.
pub const NOMINAL_TAGS: [&str; 5] = [
    "walk_sidewalk",
    "cross_crosswalk",
    "drive_road",
    "walk_grass",
    "two_people_walking",
];

/// Behaviors only injected into test footage.
pub const ANOMALY_TAGS: [&str; 5] = [
    "sit_on_car",
    "leave_object",
    "dog_alone",
    "crouch_ground",
    "person_in_box",
];

/// Canonical sentence for a behavior tag.
pub fn mock_describe(tag: &str) -> Result<&'static str, DescribeError> {
    Ok(match tag {
        "walk_sidewalk" => "The person is walking along the sidewalk.",
        "cross_crosswalk" => "Pedestrians cross at a marked crosswalk.",
        "drive_road" => "A car drives down the road in its lane.",
        "walk_grass" => "Someone strolls slowly across a lawn.",
        "two_people_walking" => "Two people are walking together side by side.",
        "sit_on_car" => "The person is sitting on the car.",
        "leave_object" => "The person leaves a bag lying on the ground.",
        "dog_alone" => "A dog is walking alone without an owner or leash.",
        "crouch_ground" => "The person is crouching down on the ground.",
        "person_in_box" => "The person is hiding inside a cardboard box.",
        other => return Err(DescribeError::UnknownBehavior(other.to_string())),
    })
}

/// Answers each request with the sentence of the unit's scripted tag.
///
/// The tag table comes from the synthetic generator's behavior sidecar,
/// keyed by unit key (`<video_id>/<unit_id>`).
#[derive(Debug, Default)]
pub struct MockDescribeBackend {
    behaviors: HashMap<String, String>,
    calls: AtomicUsize,
}

impl MockDescribeBackend {
    pub const ID: &'static str = "mock-describe-v1";

    pub fn new(behaviors: HashMap<String, String>) -> Self {
        Self {
            behaviors,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl DescribeBackend for MockDescribeBackend {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_image_side: u32::MAX,
            batch_size: 1,
            deterministic: true,
        }
    }

    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let tag = self
            .behaviors
            .get(req.unit_key)
            .ok_or_else(|| BackendError::Fatal(format!("no scripted behavior for unit {}", req.unit_key)))?;
        mock_describe(tag)
            .map(str::to_string)
            .map_err(|e| BackendError::Fatal(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lexicon_examples() {
        assert_eq!(mock_describe("walk_sidewalk").unwrap(), "The person is walking along the sidewalk.");
        assert_eq!(mock_describe("sit_on_car").unwrap(), "The person is sitting on the car.");
        assert!(matches!(mock_describe("moonwalk"), Err(DescribeError::UnknownBehavior(_))));
    }

    #[test]
    fn lexicon_is_injective_and_disjoint() {
        let all: Vec<&str> = NOMINAL_TAGS.iter().chain(ANOMALY_TAGS.iter()).copied().collect();
        let sentences: HashSet<_> = all.iter().map(|t| mock_describe(t).unwrap()).collect();
        assert_eq!(sentences.len(), all.len());
        assert!(NOMINAL_TAGS.iter().all(|t| !ANOMALY_TAGS.contains(t)));
    }

    #[test]
    fn nominal_sentences_are_separated_under_the_mock_embedder() {
        use crate::exemplar::DEFAULT_TH;
        use crate::textdist::{cosine_distance, embed, MockEmbedder};
        let e = MockEmbedder::default();
        let v: Vec<_> = NOMINAL_TAGS
            .iter()
            .map(|t| embed(&e, mock_describe(t).unwrap()).unwrap())
            .collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let d = cosine_distance(&v[i], &v[j]).unwrap();
                assert!(d > DEFAULT_TH, "{} vs {}: {d}", NOMINAL_TAGS[i], NOMINAL_TAGS[j]);
            }
        }
    }
}
