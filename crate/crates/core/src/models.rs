//! Scoring functions and the symbolic expansion of the squared score.
//!
//! The all-pairs term `Σ_{h,r,t} f̂(h,r,t)²` is expanded into a list of
//! [`TermSpec`]s. Each term is a product of per-index-set factors (one for
//! the head entities, one for the relations, one for the tail entities) so
//! that the triple sum factorises into `d×d` matrices reduced with
//! [`hadamard_sum`](crate::linalg::hadamard_sum).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Triple;
use crate::linalg::DenseMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("triple {triple} out of range for {entities} entities / {relations} relations")]
    OutOfRange {
        triple: Triple,
        entities: usize,
        relations: usize,
    },
    #[error("row {row} of table `{table}` has zero norm and cannot be projected")]
    ZeroRow { table: &'static str, row: usize },
    #[error("unit-norm projection only applies to TransE, not {0}")]
    NotTransE(ModelKind),
    #[error("invalid parameter shapes: {0}")]
    Shape(String),
    #[error("unknown model `{0}` (expected distmult, simple, complex or transe)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DistMult,
    SimplE,
    ComplEx,
    TransE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::DistMult, Self::SimplE, Self::ComplEx, Self::TransE];

    pub fn name(self) -> &'static str {
        match self {
            Self::DistMult => "distmult",
            Self::SimplE => "simple",
            Self::ComplEx => "complex",
            Self::TransE => "transe",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::DistMult => "DistMult",
            Self::SimplE => "SimplE",
            Self::ComplEx => "ComplEx",
            Self::TransE => "TransE",
        }
    }

    /// Parameter tables in storage order.
    pub fn roles(self) -> &'static [Role] {
        use Role::*;
        match self {
            Self::DistMult | Self::TransE => &[Entity, Relation],
            Self::SimplE => &[EntityHead, EntityTail, Relation, RelationInverse],
            Self::ComplEx => &[EntityRe, EntityIm, RelationRe, RelationIm],
        }
    }

    pub fn role_index(self, role: Role) -> Option<usize> {
        self.roles().iter().position(|&r| r == role)
    }

    /// The model as a signed sum of trilinear products
    /// `coef · Σ_i X[h,i]·Y[r,i]·Z[t,i]`. `None` for TransE, which is not
    /// trilinear.
    pub fn summands(self) -> Option<Vec<Summand>> {
        use Role::*;
        let s = |coefficient, head, relation, tail| Summand {
            coefficient,
            head,
            relation,
            tail,
        };
        match self {
            Self::DistMult => Some(vec![s(1.0, Entity, Relation, Entity)]),
            Self::SimplE => Some(vec![
                s(0.5, EntityHead, Relation, EntityTail),
                s(0.5, EntityTail, RelationInverse, EntityHead),
            ]),
            Self::ComplEx => Some(vec![
                s(1.0, EntityRe, RelationRe, EntityRe),
                s(1.0, EntityIm, RelationRe, EntityIm),
                s(1.0, EntityRe, RelationIm, EntityIm),
                s(-1.0, EntityIm, RelationIm, EntityRe),
            ]),
            Self::TransE => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "distmult" => Ok(Self::DistMult),
            "simple" => Ok(Self::SimplE),
            "complex" => Ok(Self::ComplEx),
            "transe" => Ok(Self::TransE),
            _ => Err(ModelError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Entity,
    Relation,
    EntityHead,
    EntityTail,
    RelationInverse,
    EntityRe,
    EntityIm,
    RelationRe,
    RelationIm,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Self::Entity => "entity",
            Self::Relation => "relation",
            Self::EntityHead => "entity_head",
            Self::EntityTail => "entity_tail",
            Self::RelationInverse => "relation_inverse",
            Self::EntityRe => "entity_re",
            Self::EntityIm => "entity_im",
            Self::RelationRe => "relation_re",
            Self::RelationIm => "relation_im",
        }
    }

    pub fn is_entity(self) -> bool {
        matches!(
            self,
            Self::Entity | Self::EntityHead | Self::EntityTail | Self::EntityRe | Self::EntityIm
        )
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One trilinear piece of a factorisation model's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summand {
    pub coefficient: f64,
    pub head: Role,
    pub relation: Role,
    pub tail: Role,
}

/// Embedding tables for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    kind: ModelKind,
    dim: usize,
    entity_count: usize,
    relation_count: usize,
    tables: Vec<DenseMatrix>,
}

impl ParameterSet {
    pub fn zeros(kind: ModelKind, entity_count: usize, relation_count: usize, dim: usize) -> Self {
        let tables = kind
            .roles()
            .iter()
            .map(|r| {
                let rows = if r.is_entity() { entity_count } else { relation_count };
                DenseMatrix::zeros(rows, dim)
            })
            .collect();
        Self {
            kind,
            dim,
            entity_count,
            relation_count,
            tables,
        }
    }

    /// Uniform `[-b, b]` initialisation with `b = √(6/(rows+cols))` per
    /// table. TransE rows are then projected onto the unit sphere.
    pub fn random(
        kind: ModelKind,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(kind, entity_count, relation_count, dim);
        for table in &mut params.tables {
            let bound = (6.0 / (table.rows() + table.cols()) as f64).sqrt();
            for x in table.data_mut() {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        if kind == ModelKind::TransE {
            // A zero row has probability zero under a continuous draw.
            project_unit_norm(&mut params).expect("random rows are non-zero");
        }
        params
    }

    /// Assembles a parameter set from tables listed in `kind.roles()` order.
    pub fn from_tables(
        kind: ModelKind,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        tables: Vec<DenseMatrix>,
    ) -> Result<Self, ModelError> {
        let roles = kind.roles();
        if tables.len() != roles.len() {
            return Err(ModelError::Shape(format!(
                "{kind} expects {} tables, got {}",
                roles.len(),
                tables.len()
            )));
        }
        for (role, t) in roles.iter().zip(&tables) {
            let rows = if role.is_entity() { entity_count } else { relation_count };
            if t.shape() != (rows, dim) {
                return Err(ModelError::Shape(format!(
                    "table `{role}` is {:?}, expected {:?}",
                    t.shape(),
                    (rows, dim)
                )));
            }
        }
        Ok(Self {
            kind,
            dim,
            entity_count,
            relation_count,
            tables,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn tables(&self) -> &[DenseMatrix] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.tables
    }

    pub fn roles(&self) -> &'static [Role] {
        self.kind.roles()
    }

    /// Panics if `role` does not belong to this model.
    pub fn table(&self, role: Role) -> &DenseMatrix {
        let i = self.kind.role_index(role).unwrap_or_else(|| panic!("{} has no `{role}` table", self.kind));
        &self.tables[i]
    }

    pub fn table_mut(&mut self, role: Role) -> &mut DenseMatrix {
        let i = self.kind.role_index(role).unwrap_or_else(|| panic!("{} has no `{role}` table", self.kind));
        &mut self.tables[i]
    }

    /// Zero tables with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<DenseMatrix> {
        self.tables.iter().map(|t| DenseMatrix::zeros(t.rows(), t.cols())).collect()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tables.iter().map(DenseMatrix::squared_norm).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.tables.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub fn check_triple(&self, t: Triple) -> Result<(), ModelError> {
        if t.head < self.entity_count && t.tail < self.entity_count && t.relation < self.relation_count {
            Ok(())
        } else {
            Err(ModelError::OutOfRange {
                triple: t,
                entities: self.entity_count,
                relations: self.relation_count,
            })
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn tri(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum()
}

/// Model score of one triple, bounds-checked.
pub fn score(params: &ParameterSet, triple: Triple) -> Result<f64, ModelError> {
    params.check_triple(triple)?;
    Ok(score_unchecked(params, triple))
}

/// Model score without bounds checks; indices must be valid.
pub fn score_unchecked(params: &ParameterSet, t: Triple) -> f64 {
    let tb = &params.tables;
    let (h, r, tl) = (t.head, t.relation, t.tail);
    match params.kind {
        ModelKind::DistMult => tri(tb[0].row(h), tb[1].row(r), tb[0].row(tl)),
        ModelKind::SimplE => {
            let (eh, et, rel, inv) = (&tb[0], &tb[1], &tb[2], &tb[3]);
            0.5 * (tri(eh.row(h), rel.row(r), et.row(tl)) + tri(eh.row(tl), inv.row(r), et.row(h)))
        }
        ModelKind::ComplEx => {
            let (ere, eim, rre, rim) = (&tb[0], &tb[1], &tb[2], &tb[3]);
            tri(ere.row(h), rre.row(r), ere.row(tl))
                + tri(eim.row(h), rre.row(r), eim.row(tl))
                + tri(ere.row(h), rim.row(r), eim.row(tl))
                - tri(eim.row(h), rim.row(r), ere.row(tl))
        }
        ModelKind::TransE => {
            let (hv, rv, tv) = (tb[0].row(h), tb[1].row(r), tb[0].row(tl));
            let dist: f64 = hv
                .iter()
                .zip(rv)
                .zip(tv)
                .map(|((a, b), c)| {
                    let x = a + b - c;
                    x * x
                })
                .sum();
            1.0 - dist / 3.0
        }
    }
}

/// Adds `weight · ∂score/∂θ` for one triple into `grads` (tables in role
/// order).
pub fn accumulate_score_gradient(params: &ParameterSet, t: Triple, weight: f64, grads: &mut [DenseMatrix]) {
    let (h, r, tl) = (t.head, t.relation, t.tail);
    match params.kind.summands() {
        Some(summands) => {
            for s in summands {
                let (xi, yi, zi) = (
                    params.kind.role_index(s.head).unwrap(),
                    params.kind.role_index(s.relation).unwrap(),
                    params.kind.role_index(s.tail).unwrap(),
                );
                let c = weight * s.coefficient;
                let x = params.tables[xi].row(h);
                let y = params.tables[yi].row(r);
                let z = params.tables[zi].row(tl);
                for i in 0..params.dim {
                    let (xv, yv, zv) = (x[i], y[i], z[i]);
                    grads[xi][(h, i)] += c * yv * zv;
                    grads[yi][(r, i)] += c * xv * zv;
                    grads[zi][(tl, i)] += c * xv * yv;
                }
            }
        }
        None => {
            // TransE: ∂/∂h = ∂/∂r = -(2/3)(h + r - t), ∂/∂t = +(2/3)(h + r - t).
            let c = weight * 2.0 / 3.0;
            let (ent, rel) = (&params.tables[0], &params.tables[1]);
            for i in 0..params.dim {
                let res = ent[(h, i)] + rel[(r, i)] - ent[(tl, i)];
                grads[0][(h, i)] -= c * res;
                grads[1][(r, i)] -= c * res;
                grads[0][(tl, i)] += c * res;
            }
        }
    }
}

/// Rescales every row of every TransE table to unit Euclidean norm.
pub fn project_unit_norm(params: &mut ParameterSet) -> Result<(), ModelError> {
    if params.kind != ModelKind::TransE {
        return Err(ModelError::NotTransE(params.kind));
    }
    for (role, table) in params.kind.roles().iter().zip(&params.tables) {
        if let Some(row) = (0..table.rows()).find(|&i| dot(table.row(i), table.row(i)) == 0.0) {
            return Err(ModelError::ZeroRow { table: role.name(), row });
        }
    }
    for table in &mut params.tables {
        for i in 0..table.rows() {
            let row = table.row_mut(i);
            let norm = dot(row, row).sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexSet {
    Head,
    Relation,
    Tail,
}

impl IndexSet {
    pub const ALL: [IndexSet; 3] = [Self::Head, Self::Relation, Self::Tail];
}

/// One `d×d` factor of a term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// `Σ_{x∈set} A[x,i]·B[x,j]`, the cross-Gram `AᵀB`.
    Gram { a: Role, b: Role, set: IndexSet },
    /// `(Σ_{x∈set_a} A[x,i]) · (Σ_{y∈set_b} B[y,j])`.
    MomentOuter {
        a: Role,
        set_a: IndexSet,
        b: Role,
        set_b: IndexSet,
    },
    /// `|set|` broadcast over every `(i, j)`.
    Count(IndexSet),
}

impl Factor {
    pub fn consumed(&self) -> Vec<IndexSet> {
        match *self {
            Factor::Gram { set, .. } | Factor::Count(set) => vec![set],
            Factor::MomentOuter { set_a, set_b, .. } => vec![set_a, set_b],
        }
    }
}

/// `coefficient · Σ_{i,j} Π factors[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSpec {
    pub coefficient: f64,
    pub factors: Vec<Factor>,
}

impl TermSpec {
    /// True when each of head, relation and tail is consumed exactly once.
    pub fn is_well_formed(&self) -> bool {
        let mut used: Vec<IndexSet> = self.factors.iter().flat_map(Factor::consumed).collect();
        used.sort();
        used == IndexSet::ALL
    }
}

/// Full expansion of the squared score, one [`TermSpec`] per product of
/// summands (squares once, cross pairs doubled).
pub fn square_terms(kind: ModelKind) -> Vec<TermSpec> {
    match kind.summands() {
        Some(summands) => {
            let mut terms = Vec::new();
            for (a, sa) in summands.iter().enumerate() {
                for sb in &summands[a..] {
                    let multiplicity = if std::ptr::eq(sa, sb) { 1.0 } else { 2.0 };
                    terms.push(TermSpec {
                        coefficient: multiplicity * sa.coefficient * sb.coefficient,
                        factors: vec![
                            Factor::Gram { a: sa.head, b: sb.head, set: IndexSet::Head },
                            Factor::Gram { a: sa.relation, b: sb.relation, set: IndexSet::Relation },
                            Factor::Gram { a: sa.tail, b: sb.tail, set: IndexSet::Tail },
                        ],
                    });
                }
            }
            terms
        }
        None => transe_terms(),
    }
}

/// On unit-norm rows `1 - ‖h+r-t‖²/3 = (2/3)(h·t + r·t - r·h)`; squaring
/// gives three squares and three signed cross products, all scaled by 4/9.
fn transe_terms() -> Vec<TermSpec> {
    use Factor::*;
    use IndexSet::*;
    let e = Role::Entity;
    let r = Role::Relation;
    let scale = 4.0 / 9.0;
    vec![
        // (h·t)²
        TermSpec {
            coefficient: scale,
            factors: vec![Gram { a: e, b: e, set: Head }, Count(Relation), Gram { a: e, b: e, set: Tail }],
        },
        // (r·t)²
        TermSpec {
            coefficient: scale,
            factors: vec![Count(Head), Gram { a: r, b: r, set: Relation }, Gram { a: e, b: e, set: Tail }],
        },
        // (r·h)²
        TermSpec {
            coefficient: scale,
            factors: vec![Gram { a: e, b: e, set: Head }, Gram { a: r, b: r, set: Relation }, Count(Tail)],
        },
        // +2(h·t)(r·t): Σ_ij h_i r_j (t_i t_j)
        TermSpec {
            coefficient: 2.0 * scale,
            factors: vec![
                MomentOuter { a: e, set_a: Head, b: r, set_b: Relation },
                Gram { a: e, b: e, set: Tail },
            ],
        },
        // -2(h·t)(r·h): Σ_ij (h_i h_j) t_i r_j
        TermSpec {
            coefficient: -2.0 * scale,
            factors: vec![
                Gram { a: e, b: e, set: Head },
                MomentOuter { a: e, set_a: Tail, b: r, set_b: Relation },
            ],
        },
        // -2(r·t)(r·h): Σ_ij (r_i r_j) t_i h_j
        TermSpec {
            coefficient: -2.0 * scale,
            factors: vec![
                Gram { a: r, b: r, set: Relation },
                MomentOuter { a: e, set_a: Tail, b: e, set_b: Head },
            ],
        },
    ]
}
