use std::collections::HashMap;
use std::path::Path;

use super::{KgeError, KgeModel};
use crate::container::{Container, SectionWriter};

impl KgeModel {
    pub fn to_container(&self) -> Container {
        let mut head = SectionWriter::default();
        head.u64(self.dim as u64)
            .u64(self.entities.len() as u64)
            .u64(self.relations.len() as u64)
            .u64(self.seed)
            .u64(self.step)
            .f64(self.lr)
            .f64(self.init_scale);
        let mut ents = SectionWriter::default();
        ents.strs(&self.entities);
        let mut rels = SectionWriter::default();
        rels.strs(&self.relations);
        let mut emb = SectionWriter::default();
        emb.f64s(&self.entity_emb);
        let mut phs = SectionWriter::default();
        phs.f64s(&self.phases);
        let mut c = Container::new();
        c.push(b"KGEH", head)
            .push(b"ENTS", ents)
            .push(b"RELS", rels)
            .push(b"EEMB", emb)
            .push(b"RPHS", phs);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, KgeError> {
        let mut h = c.section(b"KGEH")?;
        let dim = h.usize()?;
        let n_ent = h.usize()?;
        let n_rel = h.usize()?;
        let seed = h.u64()?;
        let step = h.u64()?;
        let lr = h.f64()?;
        let init_scale = h.f64()?;
        let entities = c.section(b"ENTS")?.strs()?;
        let relations = c.section(b"RELS")?.strs()?;
        let entity_emb = c.section(b"EEMB")?.f64s()?;
        let phases = c.section(b"RPHS")?.f64s()?;
        if dim == 0
            || entities.len() != n_ent
            || relations.len() != n_rel
            || entity_emb.len() != n_ent * 2 * dim
            || phases.len() != n_rel * dim
        {
            return Err(h.malformed("counts disagree with array sizes").into());
        }
        let index = |names: &[String]| -> Result<HashMap<String, usize>, KgeError> {
            let map: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
            if map.len() != names.len() {
                return Err(h.malformed("duplicate names").into());
            }
            Ok(map)
        };
        Ok(Self {
            dim,
            init_scale,
            seed,
            entity_index: index(&entities)?,
            entities,
            entity_emb,
            relation_index: index(&relations)?,
            relations,
            phases,
            step,
            lr,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KgeError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KgeError> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_exact() {
        let mut m = KgeModel::new(3, &["r", "s"], 0.25, 42);
        m.index_triples(&[("a", "r", "b"), ("b", "s", "c")]).unwrap();
        m.set_trainer_state(17, 3.5e-5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = KgeModel::load(&p).unwrap();
        assert_eq!(back, m);
        for (x, y) in back.params().0.iter().zip(m.params().0) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
