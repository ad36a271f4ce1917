//! Referential adequacy of a parsed description against its scene.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{DomainSchema, Property, Scene, SceneObject, TaggedProperty};
use crate::parser::AnnotationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Only the target fits the description.
    Unique,
    /// The target and at least one distractor fit.
    Ambiguous,
    /// Something said is false of the target, or one attribute got two values.
    IllFormed,
    /// Nothing about the target was understood.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub role: String,
    pub attribute: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackVerdict {
    pub status: Status,
    pub matching_ids: BTreeSet<String>,
    pub conflicts: Vec<Conflict>,
    /// Target properties the target does not have.
    pub false_properties: Vec<Property>,
    pub unknown_tokens: Vec<String>,
}

fn is_relational(schema: &DomainSchema, p: &Property) -> bool {
    schema.is_relational(p).unwrap_or(false)
}

/// Whether `obj` has every property `result` attributes to `role`.
///
/// A relational property `rel-r` holds of `obj` when some other object fits
/// everything said about referent `r` and the scene relates `obj` to it
/// through `rel`.
pub fn satisfies_role(obj: &SceneObject, role: &str, result: &AnnotationResult, scene: &Scene, schema: &DomainSchema) -> bool {
    result
        .properties
        .iter()
        .filter(|t| t.role == role)
        .all(|t| satisfies(obj, &t.property, result, scene, schema))
}

fn satisfies(obj: &SceneObject, p: &Property, result: &AnnotationResult, scene: &Scene, schema: &DomainSchema) -> bool {
    if !is_relational(schema, p) {
        return obj.properties.contains(p);
    }
    let landmark = &p.value;
    let landmark_fits = |other: &SceneObject| {
        result
            .properties
            .iter()
            .filter(|t| &t.role == landmark)
            .all(|t| !is_relational(schema, &t.property) && other.properties.contains(&t.property))
    };
    obj.properties
        .iter()
        .filter(|q| q.attribute == p.attribute)
        .filter_map(|q| scene.resolve(&q.value))
        .any(|other| other.id != obj.id && landmark_fits(other))
}

fn find_conflicts(properties: &BTreeSet<TaggedProperty>, schema: &DomainSchema) -> Vec<Conflict> {
    let mut by_attr: BTreeMap<(&str, &str), Vec<String>> = BTreeMap::new();
    for t in properties.iter().filter(|t| !is_relational(schema, &t.property)) {
        by_attr
            .entry((t.role.as_str(), t.property.attribute.as_str()))
            .or_default()
            .push(t.property.value.clone());
    }
    by_attr
        .into_iter()
        .filter(|(_, vs)| vs.len() > 1)
        .map(|((role, attribute), values)| Conflict {
            role: role.to_string(),
            attribute: attribute.to_string(),
            values,
        })
        .collect()
}

/// Classifies a parsed description. Ill-formedness wins over ambiguity.
pub fn check(result: &AnnotationResult, scene: &Scene, schema: &DomainSchema) -> FeedbackVerdict {
    let target_props: Vec<&TaggedProperty> = result.properties.iter().filter(|t| t.is_target()).collect();
    let matching_ids: BTreeSet<String> = scene
        .objects
        .iter()
        .filter(|o| satisfies_role(o, crate::domain::TARGET_ROLE, result, scene, schema))
        .map(|o| o.id.clone())
        .collect();
    let false_properties: Vec<Property> = match scene.target() {
        Some(target) => target_props
            .iter()
            .filter(|t| !satisfies(target, &t.property, result, scene, schema))
            .map(|t| t.property.clone())
            .collect(),
        None => target_props.iter().map(|t| t.property.clone()).collect(),
    };
    let conflicts = find_conflicts(&result.properties, schema);
    let status = if target_props.is_empty() {
        Status::Empty
    } else if !conflicts.is_empty() || !false_properties.is_empty() {
        Status::IllFormed
    } else if matching_ids.len() == 1 {
        Status::Unique
    } else {
        Status::Ambiguous
    };
    FeedbackVerdict {
        status,
        matching_ids,
        conflicts,
        false_properties,
        unknown_tokens: result.unknown_tokens(),
    }
}
