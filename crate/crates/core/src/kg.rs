//! Spatial knowledge graph: POI heads linked to category and zone tails by two
//! fixed relations, with gated incremental updates driven by visit events.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::{Gate, InteractionCell, SiblingCell, TailCell};
use crate::codec;
use crate::error::{check_len, Error, Result};
use crate::math::uniform_vec;
use crate::mobility::{EventSequence, ZoneGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    BelongTo,
    LocateAt,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::BelongTo, Relation::LocateAt];

    pub fn name(self) -> &'static str {
        match self {
            Relation::BelongTo => "belong_to",
            Relation::LocateAt => "locate_at",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub id: String,
    pub category: usize,
    pub zone: usize,
    pub location: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: String,
    pub name: String,
}

/// POIs, categories and zones with the belong-to / locate-at links. POIs and categories
/// are addressed by dense index; zone `z` has id `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct KgSchema {
    pois: Vec<Poi>,
    categories: Vec<Category>,
    zones: usize,
    poi_index: HashMap<String, usize>,
    by_category: Vec<Vec<usize>>,
    by_zone: Vec<Vec<usize>>,
}

impl KgSchema {
    pub fn new(pois: Vec<Poi>, categories: Vec<Category>, zones: usize) -> Result<Self> {
        if pois.is_empty() || categories.is_empty() || zones == 0 {
            return Err(Error::Config("knowledge graph schema is empty".into()));
        }
        let mut poi_index = HashMap::with_capacity(pois.len());
        let mut by_category = vec![Vec::new(); categories.len()];
        let mut by_zone = vec![Vec::new(); zones];
        for (i, p) in pois.iter().enumerate() {
            if poi_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate POI {}", p.id)));
            }
            by_category
                .get_mut(p.category)
                .ok_or_else(|| Error::Schema(format!("POI {} has no valid category", p.id)))?
                .push(i);
            by_zone
                .get_mut(p.zone)
                .ok_or_else(|| Error::Schema(format!("POI {} has no valid zone", p.id)))?
                .push(i);
        }
        Ok(Self {
            pois,
            categories,
            zones,
            poi_index,
            by_category,
            by_zone,
        })
    }

    /// Builds the schema from a corpus: each POI takes the category and location of its
    /// first check-in; POIs and categories are ordered by id.
    pub fn from_events(seq: &EventSequence, grid: &ZoneGrid) -> Result<Self> {
        let mut categories: BTreeMap<&str, &str> = BTreeMap::new();
        let mut pois: BTreeMap<&str, (&str, (f64, f64))> = BTreeMap::new();
        for e in seq {
            categories.entry(&e.category_id).or_insert(&e.category_name);
            pois.entry(&e.poi_id).or_insert((&e.category_id, e.location()));
        }
        let cat_index: HashMap<&str, usize> = categories.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        let pois = pois
            .into_iter()
            .map(|(id, (cat, loc))| {
                let zone = grid
                    .zone_of(loc.0, loc.1)
                    .ok_or_else(|| Error::Schema(format!("POI {id} lies outside the zone grid")))?;
                Ok(Poi {
                    id: id.to_string(),
                    category: cat_index[cat],
                    zone,
                    location: loc,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let categories = categories
            .into_iter()
            .map(|(id, name)| Category {
                id: id.to_string(),
                name: name.to_string(),
            })
            .collect();
        Self::new(pois, categories, grid.zone_count())
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn poi(&self, idx: usize) -> &Poi {
        &self.pois[idx]
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn zone_count(&self) -> usize {
        self.zones
    }

    pub fn poi_count(&self) -> usize {
        self.pois.len()
    }

    pub fn poi_index(&self, id: &str) -> Option<usize> {
        self.poi_index.get(id).copied()
    }

    fn check_poi(&self, poi: usize) -> Result<&Poi> {
        self.pois.get(poi).ok_or_else(|| Error::Lookup {
            kind: "POI",
            id: poi.to_string(),
        })
    }

    /// POIs other than `poi` that share its category or its zone, ascending.
    pub fn siblings(&self, poi: usize) -> Result<Vec<usize>> {
        let p = self.check_poi(poi)?;
        let mut out: Vec<usize> = self.by_category[p.category]
            .iter()
            .chain(&self.by_zone[p.zone])
            .copied()
            .filter(|&j| j != poi)
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// Weights of the KG updates.
#[derive(Debug, Clone, PartialEq)]
pub struct KgUpdateParams {
    /// Direction of the visited-POI candidate, scaled by `uᵀ·T̃`.
    pub poi_candidate: Vec<f64>,
    pub poi_gate: Gate,
    pub tail_gate: Gate,
    pub sibling_gate: Gate,
}

impl KgUpdateParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            poi_candidate: vec![0.0; dim],
            poi_gate: Gate::zeros(dim),
            tail_gate: Gate::zeros(dim),
            sibling_gate: Gate::zeros(dim),
        }
    }

    pub(crate) fn interaction(&self) -> InteractionCell<'_> {
        InteractionCell {
            candidate: &self.poi_candidate,
            gate: &self.poi_gate,
        }
    }

    pub(crate) fn tail_cell(&self, squash: bool) -> TailCell<'_> {
        TailCell {
            gate: &self.tail_gate,
            squash,
        }
    }

    pub(crate) fn sibling_cell(&self) -> SiblingCell<'_> {
        SiblingCell {
            gate: &self.sibling_gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgState {
    dim: usize,
    heads: Vec<Vec<f64>>,
    category_tails: Vec<Vec<f64>>,
    zone_tails: Vec<Vec<f64>>,
    relations: [Vec<f64>; 2],
}

/// New values produced for the two tails of a visited POI.
#[derive(Debug, Clone, PartialEq)]
pub struct TailUpdate {
    pub category: Vec<f64>,
    pub zone: Vec<f64>,
}

/// Which entities one KG step rewrote.
#[derive(Debug, Clone, PartialEq)]
pub struct KgStepOutcome {
    pub visited: usize,
    pub category: usize,
    pub zone: usize,
    pub siblings: Vec<usize>,
}

/// Uniform `[−0.5/N, 0.5/N]` initialisation, deterministic per seed.
pub fn init_kg(schema: &KgSchema, dim: usize, seed: u64) -> Result<KgState> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let bound = 0.5 / dim as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| (0..count).map(|_| uniform_vec(&mut rng, dim, bound)).collect::<Vec<_>>();
    let heads = draw(schema.poi_count());
    let category_tails = draw(schema.categories().len());
    let zone_tails = draw(schema.zone_count());
    let mut rel = draw(2);
    let locate = rel.pop().unwrap_or_default();
    let belong = rel.pop().unwrap_or_default();
    Ok(KgState {
        dim,
        heads,
        category_tails,
        zone_tails,
        relations: [belong, locate],
    })
}

impl KgState {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self, poi: usize) -> &[f64] {
        &self.heads[poi]
    }

    pub fn heads(&self) -> &[Vec<f64>] {
        &self.heads
    }

    pub fn category_tail(&self, category: usize) -> &[f64] {
        &self.category_tails[category]
    }

    pub fn zone_tail(&self, zone: usize) -> &[f64] {
        &self.zone_tails[zone]
    }

    pub fn relation(&self, rel: Relation) -> &[f64] {
        &self.relations[rel.index()]
    }

    fn check_head(&self, poi: usize) -> Result<&[f64]> {
        self.heads.get(poi).map(Vec::as_slice).ok_or_else(|| Error::Lookup {
            kind: "POI",
            id: poi.to_string(),
        })
    }

    /// Mean of all POI heads.
    pub fn mean_head(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for h in &self.heads {
            for (o, v) in out.iter_mut().zip(h) {
                *o += v;
            }
        }
        let n = self.heads.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn write_snapshot<W: Write>(&self, schema: &KgSchema, mut sink: W) -> Result<()> {
        for (p, h) in schema.pois().iter().zip(&self.heads) {
            sink.write_all(codec::record("head", &p.id, h).as_bytes())?;
        }
        for (c, t) in schema.categories().iter().zip(&self.category_tails) {
            sink.write_all(codec::record("category", &c.id, t).as_bytes())?;
        }
        for (z, t) in self.zone_tails.iter().enumerate() {
            sink.write_all(codec::record("zone", &z.to_string(), t).as_bytes())?;
        }
        for r in Relation::ALL {
            sink.write_all(codec::record("relation", r.name(), self.relation(r)).as_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(schema: &KgSchema, source: R) -> Result<Self> {
        let mut heads = vec![None; schema.poi_count()];
        let mut cats = vec![None; schema.categories().len()];
        let mut zones = vec![None; schema.zone_count()];
        let mut rels: [Option<Vec<f64>>; 2] = [None, None];
        let cat_index: HashMap<&str, usize> =
            schema.categories().iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
        let mut dim = None;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (kind, id, values) = codec::parse_record(&line, i + 1)?;
            let d = *dim.get_or_insert(values.len());
            check_len("kg snapshot vector", d, values.len())?;
            let unknown = || Error::Lookup {
                kind: "snapshot entity",
                id: format!("{kind}:{id}"),
            };
            let slot = match kind.as_str() {
                "head" => heads.get_mut(schema.poi_index(&id).ok_or_else(unknown)?),
                "category" => cats.get_mut(*cat_index.get(id.as_str()).ok_or_else(unknown)?),
                "zone" => zones.get_mut(id.parse::<usize>().map_err(|_| unknown())?),
                "relation" => match id.as_str() {
                    "belong_to" => Some(&mut rels[0]),
                    "locate_at" => Some(&mut rels[1]),
                    _ => None,
                },
                _ => None,
            }
            .ok_or_else(unknown)?;
            *slot = Some(values);
        }
        let missing = |what: &str| Error::Schema(format!("snapshot is missing a {what} embedding"));
        let collect = |v: Vec<Option<Vec<f64>>>, what: &str| v.into_iter().map(|x| x.ok_or_else(|| missing(what))).collect::<Result<Vec<_>>>();
        let [belong, locate] = rels;
        Ok(Self {
            dim: dim.ok_or_else(|| missing("head"))?,
            heads: collect(heads, "head")?,
            category_tails: collect(cats, "category")?,
            zone_tails: collect(zones, "zone")?,
            relations: [belong.ok_or_else(|| missing("relation"))?, locate.ok_or_else(|| missing("relation"))?],
        })
    }
}

/// New head for the visited POI from the visiting user's profile and the context vector.
pub fn update_visited_poi(kg: &KgState, params: &KgUpdateParams, poi: usize, user: &[f64], context: &[f64]) -> Result<Vec<f64>> {
    let head = kg.check_head(poi)?;
    Ok(params.interaction().forward(head, user, context)?.out)
}

/// New category and zone tails of `poi` given its freshly updated head.
pub fn update_tails(
    kg: &KgState,
    schema: &KgSchema,
    params: &KgUpdateParams,
    poi: usize,
    new_head: &[f64],
    tail_sigmoid: bool,
) -> Result<TailUpdate> {
    let p = schema.check_poi(poi)?;
    let cell = params.tail_cell(tail_sigmoid);
    let tail = |old: Option<&Vec<f64>>, rel: Relation| -> Result<Vec<f64>> {
        let old = old.ok_or_else(|| Error::Schema(format!("POI {} links to a missing tail", p.id)))?;
        Ok(cell.forward(old, new_head, kg.relation(rel))?.out)
    };
    Ok(TailUpdate {
        category: tail(kg.category_tails.get(p.category), Relation::BelongTo)?,
        zone: tail(kg.zone_tails.get(p.zone), Relation::LocateAt)?,
    })
}

/// New heads for every sibling of `poi`, reading the (already updated) tails from `kg`.
/// A sibling sharing both tails takes the category path, then the zone path.
pub fn update_sibling_pois(kg: &KgState, schema: &KgSchema, params: &KgUpdateParams, poi: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let p = schema.check_poi(poi)?;
    let cell = params.sibling_cell();
    schema
        .siblings(poi)?
        .into_iter()
        .map(|j| {
            let q = schema.poi(j);
            let mut head = kg.heads[j].clone();
            if q.category == p.category {
                head = cell.forward(&head, &kg.category_tails[p.category], kg.relation(Relation::BelongTo))?.out;
            }
            if q.zone == p.zone {
                head = cell.forward(&head, &kg.zone_tails[p.zone], kg.relation(Relation::LocateAt))?.out;
            }
            Ok((j, head))
        })
        .collect()
}

/// One full KG step for a visit: visited head, then tails, then siblings.
pub fn kg_step(
    kg: &mut KgState,
    schema: &KgSchema,
    params: &KgUpdateParams,
    poi: usize,
    user: &[f64],
    context: &[f64],
    tail_sigmoid: bool,
) -> Result<KgStepOutcome> {
    let new_head = update_visited_poi(kg, params, poi, user, context)?;
    let tails = update_tails(kg, schema, params, poi, &new_head, tail_sigmoid)?;
    let p = schema.poi(poi);
    kg.heads[poi] = new_head;
    kg.category_tails[p.category] = tails.category;
    kg.zone_tails[p.zone] = tails.zone;
    let updates = update_sibling_pois(kg, schema, params, poi)?;
    let siblings = updates.iter().map(|(j, _)| *j).collect();
    for (j, h) in updates {
        kg.heads[j] = h;
    }
    Ok(KgStepOutcome {
        visited: poi,
        category: p.category,
        zone: p.zone,
        siblings,
    })
}
