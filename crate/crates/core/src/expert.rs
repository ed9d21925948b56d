//! Merging predictions from category-specialized expert models.
//!
//! Each expert owns a set of thing categories; a single expert may be marked
//! `rest` and then owns every category nobody else claims. A prediction
//! survives the merge only if its producer owns its category. Scores pass
//! through untouched and no cross-expert suppression is applied, since owned
//! sets are disjoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coco::{CategorySet, InstancesByImage};
use crate::error::{Error, Result};
use crate::mask::ScoredInstance;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expert {
    pub name: String,
    #[serde(default)]
    pub categories: BTreeSet<u32>,
    #[serde(default)]
    pub rest: bool,
}

impl Expert {
    pub fn owning(name: &str, categories: impl IntoIterator<Item = u32>) -> Self {
        Self {
            name: name.to_owned(),
            categories: categories.into_iter().collect(),
            rest: false,
        }
    }

    pub fn rest(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            categories: BTreeSet::new(),
            rest: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Expert>", into = "Vec<Expert>")]
pub struct ExpertRouting {
    /// Sorted by name.
    experts: Vec<Expert>,
}

impl TryFrom<Vec<Expert>> for ExpertRouting {
    type Error = Error;

    fn try_from(v: Vec<Expert>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ExpertRouting> for Vec<Expert> {
    fn from(r: ExpertRouting) -> Self {
        r.experts
    }
}

impl ExpertRouting {
    /// Names must be nonempty and unique; at most one expert may be `rest`.
    pub fn new(mut experts: Vec<Expert>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::InvalidRouting("no experts".into()));
        }
        experts.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(e) = experts.iter().find(|e| e.name.is_empty()) {
            return Err(Error::InvalidRouting(format!(
                "expert with empty name owning {:?}",
                e.categories
            )));
        }
        if let Some(w) = experts.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(Error::InvalidRouting(format!(
                "expert `{}` listed twice",
                w[0].name
            )));
        }
        if experts.iter().filter(|e| e.rest).count() > 1 {
            return Err(Error::InvalidRouting(
                "more than one expert marked rest".into(),
            ));
        }
        Ok(Self { experts })
    }

    /// One model that owns every category.
    pub fn single(name: &str) -> Self {
        Self {
            experts: vec![Expert::rest(name)],
        }
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    pub fn expert(&self, name: &str) -> Option<&Expert> {
        self.experts
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.experts[i])
    }

    fn rest_expert(&self) -> Option<&Expert> {
        self.experts.iter().find(|e| e.rest)
    }

    /// Name of the expert owning `category`, if any.
    pub fn owner(&self, category: u32) -> Option<&str> {
        self.experts
            .iter()
            .find(|e| e.categories.contains(&category))
            .or_else(|| self.rest_expert())
            .map(|e| e.name.as_str())
    }

    pub fn owns(&self, expert: &str, category: u32) -> bool {
        match self.expert(expert) {
            None => false,
            Some(e) if e.categories.contains(&category) => true,
            Some(e) => e.rest && !self.explicitly_owned(category),
        }
    }

    fn explicitly_owned(&self, category: u32) -> bool {
        self.experts.iter().any(|e| e.categories.contains(&category))
    }

    fn overlaps(&self) -> BTreeMap<u32, Vec<String>> {
        let mut claims: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for e in &self.experts {
            for &c in &e.categories {
                claims.entry(c).or_default().push(e.name.clone());
            }
        }
        claims.retain(|_, v| v.len() > 1);
        claims
    }
}

/// Keep each expert's predictions for the categories it owns.
///
/// Output order is by expert name, then by each expert's input order.
pub fn merge_expert_predictions(
    per_expert: &BTreeMap<String, Vec<ScoredInstance>>,
    routing: &ExpertRouting,
) -> Result<Vec<ScoredInstance>> {
    if let Some((c, names)) = routing.overlaps().into_iter().next() {
        return Err(Error::InvalidRouting(format!(
            "category {c} owned by {}",
            names.join(", ")
        )));
    }
    let mut out = Vec::new();
    for (name, preds) in per_expert {
        if routing.expert(name).is_none() {
            return Err(Error::UnroutedExpert(name.clone()));
        }
        out.extend(
            preds
                .iter()
                .filter(|p| routing.owns(name, p.category_id()))
                .cloned(),
        );
    }
    Ok(out)
}

/// [`merge_expert_predictions`] applied to every image. An image missing from
/// some expert's results counts as an empty prediction list for that expert.
pub fn merge_by_image(
    per_expert: &BTreeMap<String, InstancesByImage>,
    routing: &ExpertRouting,
) -> Result<InstancesByImage> {
    let image_ids: BTreeSet<u64> = per_expert
        .values()
        .flat_map(|m| m.keys().copied())
        .collect();
    let mut out = InstancesByImage::new();
    for image_id in image_ids {
        let per_image: BTreeMap<String, Vec<ScoredInstance>> = per_expert
            .iter()
            .map(|(name, m)| (name.clone(), m.get(&image_id).cloned().unwrap_or_default()))
            .collect();
        let merged =
            merge_expert_predictions(&per_image, routing).map_err(|e| e.in_image(image_id))?;
        out.insert(image_id, merged);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingViolation {
    Overlap { category: u32, experts: Vec<String> },
    Uncovered { category: u32 },
    StuffClaimed { expert: String, category: u32 },
    UnknownCategory { expert: String, category: u32 },
}

impl fmt::Display for RoutingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Overlap { category, experts } => {
                write!(f, "category {category} owned by {}", experts.join(", "))
            }
            Self::Uncovered { category } => {
                write!(f, "thing category {category} has no owning expert")
            }
            Self::StuffClaimed { expert, category } => {
                write!(f, "expert `{expert}` claims stuff category {category}")
            }
            Self::UnknownCategory { expert, category } => {
                write!(f, "expert `{expert}` claims unknown category {category}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoutingReport {
    pub violations: Vec<RoutingViolation>,
}

impl RoutingReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_routing(routing: &ExpertRouting, categories: &CategorySet) -> RoutingReport {
    let mut violations: Vec<RoutingViolation> = routing
        .overlaps()
        .into_iter()
        .map(|(category, experts)| RoutingViolation::Overlap { category, experts })
        .collect();
    for e in routing.experts() {
        for &c in &e.categories {
            if !categories.contains(c) {
                violations.push(RoutingViolation::UnknownCategory {
                    expert: e.name.clone(),
                    category: c,
                });
            } else if categories.is_stuff(c) {
                violations.push(RoutingViolation::StuffClaimed {
                    expert: e.name.clone(),
                    category: c,
                });
            }
        }
    }
    violations.extend(
        categories
            .thing_ids()
            .into_iter()
            .filter(|&c| routing.owner(c).is_none())
            .map(|category| RoutingViolation::Uncovered { category }),
    );
    RoutingReport { violations }
}
