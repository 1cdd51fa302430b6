//! Hierarchical relation schema: entity types with subtype edges, coarse
//! relation categories, fine-grained relations with domain/range
//! constraints, and an alias table for mention canonicalization.
//!
//! A constraint naming a parent type accepts all of its descendants. An
//! empty domain or range set is a wildcard.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_SCHEMA: &str = include_str!("../fixtures/sdg_schema.json");

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("failed to read schema {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema integrity violation: {0}")]
    Integrity(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityType {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
    /// Alternative spellings accepted when resolving a category named by the model.
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub domain: Vec<String>,
    #[serde(default)]
    pub range: Vec<String>,
    #[serde(default)]
    pub long_tail: bool,
}

/// Alias table entry: a surface form resolves to a canonical mention of a known type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub canonical: String,
    pub entity_type: String,
}

/// On-disk schema document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub entity_types: Vec<EntityType>,
    pub categories: Vec<RelationCategory>,
    pub relations: Vec<RelationType>,
    #[serde(default)]
    pub aliases: BTreeMap<String, AliasEntry>,
}

/// A loaded, cross-checked schema. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Ontology {
    schema: SchemaFile,
    type_index: HashMap<String, usize>,
    category_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    /// ancestors[i] = type i followed by its ancestors up to the root.
    ancestors: Vec<Vec<usize>>,
    category_lookup: HashMap<String, usize>,
}

impl Ontology {
    pub fn from_schema(schema: SchemaFile) -> Result<Self, OntologyError> {
        let integrity = |msg: String| Err(OntologyError::Integrity(msg));

        let mut type_index = HashMap::new();
        for (i, t) in schema.entity_types.iter().enumerate() {
            if type_index.insert(t.id.clone(), i).is_some() {
                return integrity(format!("duplicate entity type `{}`", t.id));
            }
        }
        let mut parents = vec![None; schema.entity_types.len()];
        for (i, t) in schema.entity_types.iter().enumerate() {
            if let Some(p) = &t.parent {
                match type_index.get(p) {
                    Some(&pi) => parents[i] = Some(pi),
                    None => {
                        return integrity(format!("entity type `{}` has unknown parent `{p}`", t.id))
                    }
                }
            }
        }
        let mut ancestors = Vec::with_capacity(parents.len());
        for start in 0..parents.len() {
            let mut chain = vec![start];
            let mut cur = start;
            while let Some(p) = parents[cur] {
                if chain.contains(&p) {
                    return integrity(format!(
                        "cyclic hierarchy through `{}`",
                        schema.entity_types[start].id
                    ));
                }
                chain.push(p);
                cur = p;
            }
            ancestors.push(chain);
        }

        let mut category_index = HashMap::new();
        for (i, c) in schema.categories.iter().enumerate() {
            if category_index.insert(c.id.clone(), i).is_some() {
                return integrity(format!("duplicate category `{}`", c.id));
            }
        }

        let mut relation_index = HashMap::new();
        for (i, r) in schema.relations.iter().enumerate() {
            if relation_index.insert(r.id.clone(), i).is_some() {
                return integrity(format!("duplicate relation `{}`", r.id));
            }
            if !category_index.contains_key(&r.category) {
                return integrity(format!(
                    "relation `{}` cites unknown category `{}`",
                    r.id, r.category
                ));
            }
            for ty in r.domain.iter().chain(&r.range) {
                if !type_index.contains_key(ty) {
                    return integrity(format!("relation `{}` cites unknown type `{ty}`", r.id));
                }
            }
        }

        for (surface, entry) in &schema.aliases {
            if !type_index.contains_key(&entry.entity_type) {
                return integrity(format!(
                    "alias `{surface}` cites unknown type `{}`",
                    entry.entity_type
                ));
            }
        }

        let mut category_lookup = HashMap::new();
        for (i, c) in schema.categories.iter().enumerate() {
            for name in std::iter::once(&c.label).chain(&c.aliases) {
                category_lookup.entry(name.to_lowercase()).or_insert(i);
            }
        }
        // Exact ids win over labels and aliases.
        for (i, c) in schema.categories.iter().enumerate() {
            category_lookup.insert(c.id.to_lowercase(), i);
        }

        Ok(Self {
            schema,
            type_index,
            category_index,
            relation_index,
            ancestors,
            category_lookup,
        })
    }

    /// The bundled SDG schema: 12 entity types, 8 categories, 89 relations.
    pub fn default_sdg() -> Self {
        Self::from_json(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        Self::from_schema(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Canonical form: keys sorted at every level, two-space indentation.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(&self.schema).expect("schema serializes");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_canonical_json())
    }

    pub fn schema(&self) -> &SchemaFile {
        &self.schema
    }

    pub fn entity_types(&self) -> &[EntityType] {
        &self.schema.entity_types
    }

    pub fn categories(&self) -> &[RelationCategory] {
        &self.schema.categories
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.schema.relations
    }

    pub fn aliases(&self) -> &BTreeMap<String, AliasEntry> {
        &self.schema.aliases
    }

    pub fn entity_type(&self, id: &str) -> Option<&EntityType> {
        self.type_index.get(id).map(|&i| &self.schema.entity_types[i])
    }

    pub fn category(&self, id: &str) -> Option<&RelationCategory> {
        self.category_index.get(id).map(|&i| &self.schema.categories[i])
    }

    pub fn relation(&self, id: &str) -> Option<&RelationType> {
        self.relation_index.get(id).map(|&i| &self.schema.relations[i])
    }

    /// Position of a relation in schema-file order.
    pub fn relation_position(&self, id: &str) -> Option<usize> {
        self.relation_index.get(id).copied()
    }

    /// Resolve a category named by id, label or alias (case-insensitive).
    pub fn resolve_category(&self, name: &str) -> Option<&RelationCategory> {
        self.category_lookup
            .get(&name.trim().to_lowercase())
            .map(|&i| &self.schema.categories[i])
    }

    pub fn relations_in_category(&self, category: &str) -> Result<Vec<&RelationType>, OntologyError> {
        if !self.category_index.contains_key(category) {
            return Err(OntologyError::UnknownCategory(category.to_string()));
        }
        Ok(self
            .schema
            .relations
            .iter()
            .filter(|r| r.category == category)
            .collect())
    }

    /// Whether `relation` is one of the fine-grained relations of `category`.
    pub fn in_category(&self, relation: &str, category: &str) -> bool {
        self.relation(relation)
            .is_some_and(|r| r.category == category)
    }

    /// True iff `descendant` equals `ancestor` or lies below it in the hierarchy.
    pub fn is_subtype(&self, descendant: &str, ancestor: &str) -> bool {
        match (self.type_index.get(descendant), self.type_index.get(ancestor)) {
            (Some(&d), Some(&a)) => self.ancestors[d].contains(&a),
            _ => false,
        }
    }

    fn accepts(&self, allowed: &[String], ty: &str) -> bool {
        allowed.is_empty() || allowed.iter().any(|a| self.is_subtype(ty, a))
    }

    /// Domain/range check with hierarchical inheritance.
    pub fn check_schema(&self, head_type: &str, relation: &str, tail_type: &str) -> Result<bool, OntologyError> {
        let rel = self
            .relation(relation)
            .ok_or_else(|| OntologyError::UnknownRelation(relation.to_string()))?;
        Ok(self.accepts(&rel.domain, head_type) && self.accepts(&rel.range, tail_type))
    }

    /// The most general type a relation accepts on one side: the first
    /// constrained type in schema order, or the first root type for a wildcard.
    pub fn most_general_type(&self, relation: &str, head_side: bool) -> Option<&str> {
        let rel = self.relation(relation)?;
        let allowed = if head_side { &rel.domain } else { &rel.range };
        match allowed.first() {
            Some(t) => Some(t.as_str()),
            None => self
                .schema
                .entity_types
                .iter()
                .find(|t| t.parent.is_none())
                .map(|t| t.id.as_str()),
        }
    }

    pub fn lookup_alias(&self, surface: &str) -> Option<&AliasEntry> {
        self.schema.aliases.get(surface)
    }

    /// All surface forms (including the canonical form itself) that resolve to `canonical`.
    pub fn surface_forms<'a>(&'a self, canonical: &'a str) -> Vec<&'a str> {
        let mut forms: Vec<&str> = vec![canonical];
        forms.extend(
            self.schema
                .aliases
                .iter()
                .filter(|(s, e)| e.canonical == canonical && s.as_str() != canonical)
                .map(|(s, _)| s.as_str()),
        );
        forms
    }

    /// Canonical mentions named by the alias table, deduplicated, sorted.
    pub fn canonical_mentions(&self) -> Vec<&str> {
        let set: HashSet<&str> = self
            .schema
            .aliases
            .values()
            .map(|e| e.canonical.as_str())
            .collect();
        let mut v: Vec<&str> = set.into_iter().collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(relations: &str) -> String {
        format!(
            r#"{{"entity_types":[{{"id":"Geo","label":"g"}},{{"id":"Country","label":"c","parent":"Geo"}},{{"id":"Thing","label":"t"}}],
                "categories":[{{"id":"Spatial","label":"Spatial"}}],
                "relations":{relations}}}"#
        )
    }

    #[test]
    fn default_schema_counts() {
        let o = Ontology::default_sdg();
        assert_eq!(o.entity_types().len(), 12);
        assert_eq!(o.categories().len(), 8);
        assert_eq!(o.relations().len(), 89);
        let counts: Vec<usize> = o
            .categories()
            .iter()
            .map(|c| o.relations_in_category(&c.id).unwrap().len())
            .collect();
        assert_eq!(counts, vec![4, 4, 11, 14, 6, 17, 10, 23]);
        assert_eq!(counts.iter().sum::<usize>(), 89);
    }

    #[test]
    fn quantitative_and_naming_menus() {
        let o = Ontology::default_sdg();
        let q = o.relations_in_category("Quantitative").unwrap();
        assert_eq!(q.len(), 14);
        assert!(q.iter().any(|r| r.id == "hasValue"));
        assert!(q.iter().any(|r| r.id == "hasUnit"));
        assert_eq!(q[0].id, "hasValue");
        assert_eq!(o.relations_in_category("Definition & Naming").unwrap().len(), 4);
        assert!(matches!(
            o.relations_in_category("Misc"),
            Err(OntologyError::UnknownCategory(_))
        ));
    }

    #[test]
    fn hierarchy_inheritance() {
        let o = Ontology::default_sdg();
        assert!(o.check_schema("Province", "locatedIn", "Country").unwrap());
        assert!(!o.check_schema("Indicator", "locatedIn", "Indicator").unwrap());
        assert!(o.check_schema("SubBasin", "locatedIn", "Basin").unwrap());
        assert!(matches!(
            o.check_schema("Country", "situatedAt", "Country"),
            Err(OntologyError::UnknownRelation(_))
        ));
    }

    #[test]
    fn empty_constraint_is_wildcard_for_every_pair() {
        let o = Ontology::from_json(&tiny(
            r#"[{"id":"near","category":"Spatial"},{"id":"in","category":"Spatial","domain":["Geo"],"range":["Geo"]}]"#,
        ))
        .unwrap();
        let types = ["Geo", "Country", "Thing"];
        for h in types {
            for t in types {
                assert!(o.check_schema(h, "near", t).unwrap());
                let geo = |x: &str| x == "Geo" || x == "Country";
                assert_eq!(o.check_schema(h, "in", t).unwrap(), geo(h) && geo(t), "{h} {t}");
            }
        }
    }

    #[test]
    fn empty_relations_is_valid() {
        let o = Ontology::from_json(&tiny("[]")).unwrap();
        assert!(o.relations().is_empty());
        assert!(o.relations_in_category("Spatial").unwrap().is_empty());
    }

    #[test]
    fn integrity_errors() {
        let dangling = tiny(r#"[{"id":"x","category":"Misc"}]"#);
        assert!(matches!(Ontology::from_json(&dangling), Err(OntologyError::Integrity(_))));
        let dup = tiny(r#"[{"id":"x","category":"Spatial"},{"id":"x","category":"Spatial"}]"#);
        assert!(matches!(Ontology::from_json(&dup), Err(OntologyError::Integrity(_))));
        let bad_type = tiny(r#"[{"id":"x","category":"Spatial","domain":["Nope"]}]"#);
        assert!(matches!(Ontology::from_json(&bad_type), Err(OntologyError::Integrity(_))));
        let cyclic = r#"{"entity_types":[{"id":"A","label":"a","parent":"B"},{"id":"B","label":"b","parent":"A"}],
                         "categories":[],"relations":[]}"#;
        assert!(matches!(Ontology::from_json(cyclic), Err(OntologyError::Integrity(_))));
        assert!(matches!(Ontology::from_json("{not json"), Err(OntologyError::Parse(_))));
    }

    #[test]
    fn canonical_round_trip() {
        let o = Ontology::default_sdg();
        let text = o.to_canonical_json();
        let again = Ontology::from_json(&text).unwrap();
        assert_eq!(again.schema(), o.schema());
        assert_eq!(again.to_canonical_json(), text);
    }

    #[test]
    fn check_schema_is_monotone_under_hierarchy() {
        let o = Ontology::default_sdg();
        let ids: Vec<&str> = o.entity_types().iter().map(|t| t.id.as_str()).collect();
        for rel in o.relations() {
            for &h in &ids {
                for &t in &ids {
                    if !o.check_schema(h, &rel.id, t).unwrap() {
                        continue;
                    }
                    for &hd in ids.iter().filter(|d| o.is_subtype(d, h)) {
                        for &td in ids.iter().filter(|d| o.is_subtype(d, t)) {
                            assert!(o.check_schema(hd, &rel.id, td).unwrap());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn category_resolution_by_alias() {
        let o = Ontology::default_sdg();
        assert_eq!(o.resolve_category("Provenance").unwrap().id, "Provenance & Method");
        assert_eq!(o.resolve_category("causality").unwrap().id, "Causality & Impact");
        assert_eq!(o.resolve_category("Quantitative").unwrap().id, "Quantitative");
        assert!(o.resolve_category("Misc").is_none());
    }

    #[test]
    fn alias_surface_forms() {
        let o = Ontology::default_sdg();
        let forms = o.surface_forms("中国");
        assert!(forms.contains(&"中华人民共和国"));
        assert_eq!(o.lookup_alias("青海").unwrap().canonical, "青海省");
    }
}
