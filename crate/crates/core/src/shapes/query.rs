use super::{Color, Part, Scene, ShapeKind};
use crate::data::{render_prompt, Mask, Task};
use crate::error::{Error, Result};

/// One shape as seen at pixel level.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub kind: ShapeKind,
    pub color: Color,
    pub mask: Mask,
    pub border: Mask,
    pub interior: Mask,
    /// `[row0, col0, row1, col1)`
    pub bbox: [usize; 4],
    pub area: usize,
}

impl Instance {
    pub fn part(&self, part: Part) -> &Mask {
        match part {
            Part::Border => &self.border,
            Part::Interior => &self.interior,
        }
    }
}

/// Rasterizes every shape of `scene` into its own instance.
pub fn instances(scene: &Scene) -> Vec<Instance> {
    scene
        .shapes
        .iter()
        .map(|s| {
            let (h, w) = (scene.height, scene.width);
            let mut mask = Mask::zeros(h, w);
            let mut border = Mask::zeros(h, w);
            let mut interior = Mask::zeros(h, w);
            let e = s.extent();
            let rows = (e[0] - 1).max(0) as usize..((e[2] + 1).max(0) as usize).min(h);
            let cols = (e[1] - 1).max(0) as usize..((e[3] + 1).max(0) as usize).min(w);
            for r in rows {
                for c in cols.clone() {
                    match s.part_at(r, c) {
                        Some(Part::Border) => border.set(r, c, true),
                        Some(Part::Interior) => interior.set(r, c, true),
                        None => continue,
                    }
                    mask.set(r, c, true);
                }
            }
            let bbox = mask.bbox().unwrap_or([0, 0, 0, 0]);
            let area = mask.count();
            Instance {
                kind: s.kind,
                color: s.color,
                mask,
                border,
                interior,
                bbox,
                area,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CategorySel {
    Kind(ShapeKind),
    Color(Color),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extreme {
    Largest,
    Smallest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
    ];

    fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Whether box `a` lies strictly on this side of box `b`.
    fn holds(self, a: &[usize; 4], b: &[usize; 4]) -> bool {
        match self {
            Relation::LeftOf => a[3] <= b[1],
            Relation::RightOf => a[1] >= b[3],
            Relation::Above => a[2] <= b[0],
            Relation::Below => a[0] >= b[2],
        }
    }
}

/// Description that should single out one shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Referent {
    /// "the red circle"
    Attribute { color: Color, kind: ShapeKind },
    /// "the largest circle", "the largest blue square", "the smallest shape"
    Superlative {
        extreme: Extreme,
        color: Option<Color>,
        kind: Option<ShapeKind>,
    },
    /// "the circle left of the square"
    Relation {
        kind: ShapeKind,
        relation: Relation,
        anchor: ShapeKind,
    },
}

impl Referent {
    pub fn describe(&self) -> String {
        match *self {
            Referent::Attribute { color, kind } => format!("the {color} {kind}"),
            Referent::Superlative {
                extreme,
                color,
                kind,
            } => {
                let mut s = String::from(match extreme {
                    Extreme::Largest => "the largest",
                    Extreme::Smallest => "the smallest",
                });
                if let Some(c) = color {
                    s.push(' ');
                    s.push_str(c.name());
                }
                s.push(' ');
                s.push_str(kind.map_or("shape", ShapeKind::name));
                s
            }
            Referent::Relation {
                kind,
                relation,
                anchor,
            } => format!("the {kind} {} the {anchor}", relation.phrase()),
        }
    }

    fn candidates(&self, insts: &[Instance]) -> Vec<usize> {
        match *self {
            Referent::Attribute { color, kind } => (0..insts.len())
                .filter(|&i| insts[i].color == color && insts[i].kind == kind)
                .collect(),
            Referent::Superlative {
                extreme,
                color,
                kind,
            } => {
                let pool: Vec<usize> = (0..insts.len())
                    .filter(|&i| color.is_none_or(|c| insts[i].color == c))
                    .filter(|&i| kind.is_none_or(|k| insts[i].kind == k))
                    .collect();
                let key = |i: &usize| insts[*i].area;
                let best = match extreme {
                    Extreme::Largest => pool.iter().map(key).max(),
                    Extreme::Smallest => pool.iter().map(key).min(),
                };
                pool.into_iter()
                    .filter(|i| Some(key(i)) == best)
                    .collect()
            }
            Referent::Relation {
                kind,
                relation,
                anchor,
            } => {
                if kind == anchor {
                    return Vec::new();
                }
                let anchors: Vec<usize> =
                    (0..insts.len()).filter(|&i| insts[i].kind == anchor).collect();
                let [a] = anchors[..] else {
                    return Vec::new();
                };
                (0..insts.len())
                    .filter(|&i| insts[i].kind == kind && relation.holds(&insts[i].bbox, &insts[a].bbox))
                    .collect()
            }
        }
    }

    /// Index of the unique instance this description refers to.
    pub fn resolve(&self, insts: &[Instance]) -> Result<usize> {
        match self.candidates(insts)[..] {
            [one] => Ok(one),
            ref many => Err(Error::AmbiguousReferent {
                query: self.describe(),
                matches: many.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Query {
    Category(CategorySel),
    Referring(Referent),
    Salient,
    Part { kind: ShapeKind, part: Part },
}

impl Query {
    /// Task whose prompt template this query is rendered with.
    pub fn default_task(&self) -> Task {
        match self {
            Query::Category(CategorySel::Kind(_)) => Task::Ss,
            Query::Category(CategorySel::Color(_)) => Task::Ovs,
            Query::Referring(_) => Task::Ris,
            Query::Salient => Task::Sod,
            Query::Part { .. } => Task::Ps,
        }
    }

    /// Text slotted into the task template, if the template takes one.
    pub fn payload(&self) -> Option<String> {
        match self {
            Query::Category(CategorySel::Kind(k)) => Some(k.name().to_string()),
            Query::Category(CategorySel::Color(c)) => Some(c.name().to_string()),
            Query::Referring(r) => Some(r.describe()),
            Query::Salient => None,
            Query::Part { kind, part } => Some(format!("{kind} {part}")),
        }
    }

    pub fn caption(&self, task: Task) -> Result<String> {
        render_prompt(task, self.payload().as_deref())
    }

    /// Parses a caption produced by [`Query::caption`].
    pub fn from_caption(caption: &str) -> Option<Query> {
        let words: Vec<&str> = caption.split_whitespace().collect();
        match words[..] {
            ["the", "most", "salient", "object"] => Some(Query::Salient),
            ["all", w] => w
                .parse()
                .map(|k| Query::Category(CategorySel::Kind(k)))
                .or_else(|_| w.parse().map(|c| Query::Category(CategorySel::Color(c))))
                .ok(),
            ["all", k, p] => Some(Query::Part {
                kind: k.parse().ok()?,
                part: p.parse().ok()?,
            }),
            ["the", ref rest @ ..] => parse_referent(rest).map(Query::Referring),
            _ => None,
        }
    }
}

fn parse_referent(words: &[&str]) -> Option<Referent> {
    let extreme = |w: &str| match w {
        "largest" => Some(Extreme::Largest),
        "smallest" => Some(Extreme::Smallest),
        _ => None,
    };
    let kind_or_shape = |w: &str| -> Option<Option<ShapeKind>> {
        if w == "shape" {
            Some(None)
        } else {
            w.parse().ok().map(Some)
        }
    };
    match *words {
        [e, k] if extreme(e).is_some() => Some(Referent::Superlative {
            extreme: extreme(e)?,
            color: None,
            kind: kind_or_shape(k)?,
        }),
        [e, c, k] if extreme(e).is_some() => Some(Referent::Superlative {
            extreme: extreme(e)?,
            color: Some(c.parse().ok()?),
            kind: kind_or_shape(k)?,
        }),
        [c, k] => Some(Referent::Attribute {
            color: c.parse().ok()?,
            kind: k.parse().ok()?,
        }),
        [k, ref rel @ .., "the", a] => {
            let relation = match rel {
                ["left", "of"] => Relation::LeftOf,
                ["right", "of"] => Relation::RightOf,
                ["above"] => Relation::Above,
                ["below"] => Relation::Below,
                _ => return None,
            };
            Some(Referent::Relation {
                kind: k.parse().ok()?,
                relation,
                anchor: a.parse().ok()?,
            })
        }
        _ => None,
    }
}

fn union_where(insts: &[Instance], h: usize, w: usize, pick: impl Fn(&Instance) -> Option<&Mask>) -> Mask {
    insts
        .iter()
        .filter_map(pick)
        .fold(Mask::zeros(h, w), |acc, m| acc.union(m))
}

/// Ground-truth mask of `query` over already rasterized instances.
pub fn rasterize_instances(insts: &[Instance], h: usize, w: usize, query: &Query) -> Result<Mask> {
    Ok(match *query {
        Query::Category(CategorySel::Kind(k)) => union_where(insts, h, w, |i| (i.kind == k).then_some(&i.mask)),
        Query::Category(CategorySel::Color(c)) => union_where(insts, h, w, |i| (i.color == c).then_some(&i.mask)),
        Query::Referring(r) => insts[r.resolve(insts)?].mask.clone(),
        Query::Salient => insts
            .iter()
            .max_by_key(|i| i.area)
            .map_or_else(|| Mask::zeros(h, w), |i| i.mask.clone()),
        Query::Part { kind, part } => {
            union_where(insts, h, w, |i| (i.kind == kind).then_some(i.part(part)))
        }
    })
}

/// Exact ground-truth mask of `query` on `scene`.
pub fn rasterize_mask(scene: &Scene, query: &Query) -> Result<Mask> {
    rasterize_instances(&instances(scene), scene.height, scene.width, query)
}

/// Every referring description that picks out exactly one shape, in shape
/// order: attribute, then superlatives within the kind, then relations.
pub fn referring_queries(insts: &[Instance]) -> Vec<(usize, Referent)> {
    let mut out = Vec::new();
    for (i, inst) in insts.iter().enumerate() {
        let mut options = vec![Referent::Attribute {
            color: inst.color,
            kind: inst.kind,
        }];
        if insts.iter().filter(|o| o.kind == inst.kind).count() >= 2 {
            for extreme in [Extreme::Largest, Extreme::Smallest] {
                options.push(Referent::Superlative {
                    extreme,
                    color: None,
                    kind: Some(inst.kind),
                });
            }
        }
        for anchor in ShapeKind::ALL {
            for relation in Relation::ALL {
                options.push(Referent::Relation {
                    kind: inst.kind,
                    relation,
                    anchor,
                });
            }
        }
        out.extend(
            options
                .into_iter()
                .filter(|r| r.resolve(insts).ok() == Some(i))
                .map(|r| (i, r)),
        );
    }
    out
}
