use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::VOID;

/// One entry of a COCO panoptic `categories` list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    #[serde(rename = "isthing", with = "int_bool")]
    pub is_thing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Category {
    pub fn thing(id: u32, name: &str) -> Self {
        Self::new(id, name, true)
    }

    pub fn stuff(id: u32, name: &str) -> Self {
        Self::new(id, name, false)
    }

    fn new(id: u32, name: &str, is_thing: bool) -> Self {
        Self {
            id,
            name: name.to_owned(),
            is_thing,
            color: Some(crate::visual::segment_color(id)),
            extra: Default::default(),
        }
    }
}

/// Validated category list with the derived merged-thing id.
#[derive(Clone, Debug, PartialEq)]
pub struct CategorySet {
    categories: Vec<Category>,
    index: BTreeMap<u32, usize>,
    merged_thing: u32,
}

impl CategorySet {
    /// Ids must be unique and nonzero. The merged-thing id is one past the
    /// largest stuff id and must not collide with a listed category.
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in categories.iter().enumerate() {
            if c.id == VOID {
                return Err(Error::InvalidCategories(format!(
                    "category `{}` uses the reserved VOID id 0",
                    c.name
                )));
            }
            if index.insert(c.id, i).is_some() {
                return Err(Error::InvalidCategories(format!(
                    "duplicate category id {}",
                    c.id
                )));
            }
        }
        let max_stuff = categories
            .iter()
            .filter(|c| !c.is_thing)
            .map(|c| c.id)
            .max()
            .unwrap_or(VOID);
        let merged_thing = max_stuff.checked_add(1).ok_or_else(|| {
            Error::InvalidCategories("stuff id leaves no room for merged-thing".into())
        })?;
        if index.contains_key(&merged_thing) {
            return Err(Error::InvalidCategories(format!(
                "merged-thing id {merged_thing} collides with an existing category"
            )));
        }
        Ok(Self {
            categories,
            index,
            merged_thing,
        })
    }

    pub fn get(&self, id: u32) -> Option<&Category> {
        self.index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn is_thing(&self, id: u32) -> bool {
        self.get(id).is_some_and(|c| c.is_thing)
    }

    pub fn is_stuff(&self, id: u32) -> bool {
        self.get(id).is_some_and(|c| !c.is_thing)
    }

    /// Id standing in for every thing category in semantic label maps.
    pub fn merged_thing_id(&self) -> u32 {
        self.merged_thing
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn as_slice(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Sorted thing ids.
    pub fn thing_ids(&self) -> Vec<u32> {
        self.index
            .keys()
            .copied()
            .filter(|&id| self.is_thing(id))
            .collect()
    }

    /// Sorted stuff ids.
    pub fn stuff_ids(&self) -> Vec<u32> {
        self.index
            .keys()
            .copied()
            .filter(|&id| self.is_stuff(id))
            .collect()
    }

    /// Label ids a converted semantic map may carry: stuff ids then merged-thing.
    pub fn semantic_ids(&self) -> Vec<u32> {
        let mut ids = self.stuff_ids();
        ids.push(self.merged_thing);
        ids
    }

    /// Whether `id` is a legal non-VOID label in a converted semantic map.
    pub fn is_semantic_label(&self, id: u32) -> bool {
        id == self.merged_thing || self.is_stuff(id)
    }

    /// Display name, including the synthetic merged-thing entry.
    pub fn name(&self, id: u32) -> String {
        if id == self.merged_thing {
            return "merged-thing".into();
        }
        self.get(id)
            .map(|c| c.name.clone())
            .unwrap_or_else(|| format!("category-{id}"))
    }
}

pub(crate) mod int_bool {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Flag {
            Int(u64),
            Bool(bool),
        }
        Ok(match Flag::deserialize(d)? {
            Flag::Int(i) => i != 0,
            Flag::Bool(b) => b,
        })
    }
}



#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_thing_is_one_past_max_stuff() {
        let cats = CategorySet::new(vec![
            Category::thing(1, "person"),
            Category::thing(3, "car"),
            Category::stuff(184, "grass"),
            Category::stuff(187, "sky"),
        ])
        .unwrap();
        assert_eq!(cats.merged_thing_id(), 188);
        assert_eq!(cats.thing_ids(), vec![1, 3]);
        assert_eq!(cats.semantic_ids(), vec![184, 187, 188]);
        assert!(cats.is_semantic_label(188));
        assert!(!cats.is_semantic_label(1));
    }

    #[test]
    fn rejects_void_duplicates_and_collisions() {
        assert!(CategorySet::new(vec![Category::thing(0, "x")]).is_err());
        assert!(
            CategorySet::new(vec![Category::thing(2, "a"), Category::stuff(2, "b")]).is_err()
        );
        assert!(
            CategorySet::new(vec![Category::stuff(5, "a"), Category::thing(6, "b")]).is_err()
        );
    }

    #[test]
    fn isthing_accepts_ints_and_bools() {
        let c: Category =
            serde_json::from_str(r#"{"id":1,"name":"p","isthing":true,"color":[1,2,3]}"#)
                .unwrap();
        assert!(c.is_thing);
        let c: Category =
            serde_json::from_str(r#"{"id":1,"name":"p","isthing":0,"color":[1,2,3]}"#).unwrap();
        assert!(!c.is_thing);
        assert_eq!(serde_json::to_value(&c).unwrap()["isthing"], 0);
    }
}
