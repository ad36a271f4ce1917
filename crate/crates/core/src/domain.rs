//! Domain model: attributes, properties, objects and scenes.
//!
//! A domain schema lists every attribute a corpus may use. Taxonomic
//! attributes carry a closed list of legal values (`colour` ∈ {red, blue}),
//! relational attributes take object role identifiers as values (`near-lm`).
//! Dotted attribute names such as `hair.colour` are opaque labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role of the object a description is about.
pub const TARGET_ROLE: &str = "target";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("attribute `{0}` is not declared in the domain schema")]
    UnknownAttribute(String),
    #[error("value `{value}` is not legal for attribute `{attribute}`")]
    IllegalValue { attribute: String, value: String },
    #[error("scene `{scene}`: {reason}")]
    InvalidScene { scene: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Taxonomic,
    Relational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
    /// Legal values; must be empty for relational attributes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

impl AttributeDef {
    pub fn taxonomic<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind: AttributeKind::Taxonomic,
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn relational(name: &str) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind: AttributeKind::Relational,
            values: Vec::new(),
        }
    }
}

fn default_type_attribute() -> String {
    "type".to_string()
}

/// The domain `D`: attributes, their kinds and the object roles that
/// relational values may refer to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub domain: String,
    pub attributes: Vec<AttributeDef>,
    /// Landmark role identifiers (`lm`, `lm2`, ...). The target role is implicit.
    #[serde(default)]
    pub roles: Vec<String>,
    /// Attribute whose values denote object types; words mapped to it act as head nouns.
    #[serde(default = "default_type_attribute")]
    pub type_attribute: String,
}

/// One broken schema invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub attribute: Option<String>,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.attribute {
            Some(a) => write!(f, "attribute `{a}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl DomainSchema {
    pub fn new(domain: &str, attributes: Vec<AttributeDef>, roles: &[&str]) -> Self {
        DomainSchema {
            domain: domain.to_string(),
            attributes,
            roles: roles.iter().map(|r| r.to_string()).collect(),
            type_attribute: default_type_attribute(),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn is_role(&self, value: &str) -> bool {
        value == TARGET_ROLE || self.roles.iter().any(|r| r == value)
    }

    /// Lists every broken invariant; an empty list means the schema is well formed.
    pub fn validate(&self) -> Vec<SchemaViolation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            let v = |message: String| SchemaViolation {
                attribute: Some(attr.name.clone()),
                message,
            };
            if attr.name.trim().is_empty() {
                out.push(v("empty attribute name".into()));
            }
            if !seen.insert(attr.name.as_str()) {
                out.push(v("duplicate attribute name".into()));
            }
            match attr.kind {
                AttributeKind::Relational if !attr.values.is_empty() => out.push(v(format!(
                    "relational attribute must not list values (found {})",
                    attr.values.join(", ")
                ))),
                AttributeKind::Taxonomic if attr.values.is_empty() => {
                    out.push(v("taxonomic attribute needs at least one legal value".into()))
                }
                AttributeKind::Taxonomic => {
                    let mut vals = HashSet::new();
                    for value in &attr.values {
                        if !vals.insert(value) {
                            out.push(v(format!("duplicate value `{value}`")));
                        }
                    }
                }
                _ => {}
            }
        }
        let mut roles = HashSet::new();
        for role in &self.roles {
            if role == TARGET_ROLE || !roles.insert(role) {
                out.push(SchemaViolation {
                    attribute: None,
                    message: format!("duplicate or reserved role `{role}`"),
                });
            }
        }
        out
    }

    /// Whether `p` names a relation to another object.
    pub fn is_relational(&self, p: &Property) -> Result<bool, DomainError> {
        self.attribute(&p.attribute)
            .map(|a| a.kind == AttributeKind::Relational)
            .ok_or_else(|| DomainError::UnknownAttribute(p.attribute.clone()))
    }

    /// Checks that `p` is a legal attribute-value pair under this schema.
    pub fn check_property(&self, p: &Property) -> Result<(), DomainError> {
        let attr = self
            .attribute(&p.attribute)
            .ok_or_else(|| DomainError::UnknownAttribute(p.attribute.clone()))?;
        let legal = match attr.kind {
            AttributeKind::Taxonomic => attr.values.contains(&p.value),
            AttributeKind::Relational => self.is_role(&p.value),
        };
        if legal {
            Ok(())
        } else {
            Err(DomainError::IllegalValue {
                attribute: p.attribute.clone(),
                value: p.value.clone(),
            })
        }
    }

    /// Maps a numbered landmark role (`lm2`) back to the role it counts from (`lm`).
    pub fn base_role<'a>(&self, role: &'a str) -> &'a str {
        let stem = role.trim_end_matches(|c: char| c.is_ascii_digit());
        if stem.len() < role.len() && self.roles.iter().any(|r| r == stem) {
            stem
        } else {
            role
        }
    }
}

/// An attribute-value pair such as `colour-red` or `near-lm`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Property {
    pub attribute: String,
    pub value: String,
}

impl Property {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        Property {
            attribute: attribute.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.attribute, self.value)
    }
}

/// Duplicate-free, unordered collection of properties.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PropertySet(BTreeSet<Property>);

impl PropertySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if `p` was already present.
    pub fn insert(&mut self, p: Property) -> bool {
        self.0.insert(p)
    }

    pub fn contains(&self, p: &Property) -> bool {
        self.0.contains(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Property> {
        self.0.iter()
    }

    pub fn union(&self, other: &PropertySet) -> PropertySet {
        PropertySet(self.0.union(&other.0).cloned().collect())
    }

    pub fn as_set(&self) -> &BTreeSet<Property> {
        &self.0
    }

    /// Values of `attribute` in this set, in sorted order.
    pub fn values_of<'a>(&'a self, attribute: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |p| p.attribute == attribute)
            .map(|p| p.value.as_str())
    }
}

impl FromIterator<Property> for PropertySet {
    fn from_iter<I: IntoIterator<Item = Property>>(iter: I) -> Self {
        PropertySet(iter.into_iter().collect())
    }
}

impl IntoIterator for PropertySet {
    type Item = Property;
    type IntoIter = std::collections::btree_set::IntoIter<Property>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a PropertySet {
    type Item = &'a Property;
    type IntoIter = std::collections::btree_set::Iter<'a, Property>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for PropertySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str("}")
    }
}

pub fn property_sets_identical(a: &PropertySet, b: &PropertySet) -> bool {
    a == b
}

fn default_role() -> String {
    TARGET_ROLE.to_string()
}

fn is_target(role: &str) -> bool {
    role == TARGET_ROLE
}

/// A property attributed to one referent of a description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaggedProperty {
    #[serde(default = "default_role", skip_serializing_if = "is_target")]
    pub role: String,
    #[serde(flatten)]
    pub property: Property,
}

impl TaggedProperty {
    pub fn new(role: impl Into<String>, property: Property) -> Self {
        TaggedProperty {
            role: role.into(),
            property,
        }
    }

    pub fn target(property: Property) -> Self {
        Self::new(TARGET_ROLE, property)
    }

    pub fn is_target(&self) -> bool {
        is_target(&self.role)
    }
}

impl fmt::Display for TaggedProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_target() {
            write!(f, "{}", self.property)
        } else {
            write!(f, "{}:{}", self.role, self.property)
        }
    }
}

/// Drops role tags.
pub fn untagged<'a>(props: impl IntoIterator<Item = &'a TaggedProperty>) -> PropertySet {
    props.into_iter().map(|t| t.property.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub properties: PropertySet,
}

impl SceneObject {
    pub fn new(id: &str, properties: impl IntoIterator<Item = Property>) -> Self {
        SceneObject {
            id: id.to_string(),
            role: None,
            properties: properties.into_iter().collect(),
        }
    }

    pub fn with_role(mut self, role: &str) -> Self {
        self.role = Some(role.to_string());
        self
    }
}

/// A reference context: the objects shown to a participant and the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub objects: Vec<SceneObject>,
    pub target_id: String,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn target(&self) -> Option<&SceneObject> {
        self.object(&self.target_id)
    }

    /// Resolves a relational value (a role identifier or an object id) to an object.
    pub fn resolve(&self, value: &str) -> Option<&SceneObject> {
        let by_role = |o: &&SceneObject| {
            o.role.as_deref() == Some(value) || (value == TARGET_ROLE && o.id == self.target_id)
        };
        self.objects
            .iter()
            .find(by_role)
            .or_else(|| self.object(value))
    }

    pub fn validate(&self, schema: &DomainSchema) -> Result<(), DomainError> {
        let bad = |reason: String| DomainError::InvalidScene {
            scene: self.id.clone(),
            reason,
        };
        let mut ids = HashSet::new();
        for obj in &self.objects {
            if !ids.insert(obj.id.as_str()) {
                return Err(bad(format!("duplicate object id `{}`", obj.id)));
            }
        }
        let targets = self.objects.iter().filter(|o| o.id == self.target_id).count();
        if targets != 1 {
            return Err(bad(format!("target `{}` does not resolve to one object", self.target_id)));
        }
        for obj in &self.objects {
            let mut per_attr: BTreeMap<&str, usize> = BTreeMap::new();
            for p in &obj.properties {
                let attr = schema
                    .attribute(&p.attribute)
                    .ok_or_else(|| bad(format!("object `{}`: {}", obj.id, DomainError::UnknownAttribute(p.attribute.clone()))))?;
                match attr.kind {
                    AttributeKind::Taxonomic => {
                        schema
                            .check_property(p)
                            .map_err(|e| bad(format!("object `{}`: {e}", obj.id)))?;
                        *per_attr.entry(p.attribute.as_str()).or_default() += 1;
                    }
                    AttributeKind::Relational => {
                        if self.resolve(&p.value).is_none() {
                            return Err(bad(format!(
                                "object `{}`: relation {p} names no object",
                                obj.id
                            )));
                        }
                    }
                }
            }
            if let Some((a, _)) = per_attr.iter().find(|(_, n)| **n > 1) {
                return Err(bad(format!("object `{}` has several values for `{a}`", obj.id)));
            }
        }
        Ok(())
    }
}
