use std::fmt;

/// Canvas side length in pixels.
pub const CANVAS: usize = 16;
/// Side length of an object's bounding box.
pub const BOX: usize = 6;
/// Top row of both bounding boxes.
pub const BOX_TOP: usize = 5;
/// Left column of the left and right bounding boxes.
pub const BOX_LEFT: [usize; 2] = [1, 9];
pub const BACKGROUND: f32 = 0.5;

/// The eight RGB cube corners, in vocabulary order.
pub const PALETTE: [(Color, [f32; 3]); 8] = [
    (Color::Red, [1.0, 0.0, 0.0]),
    (Color::Green, [0.0, 1.0, 0.0]),
    (Color::Blue, [0.0, 0.0, 1.0]),
    (Color::Yellow, [1.0, 1.0, 0.0]),
    (Color::Cyan, [0.0, 1.0, 1.0]),
    (Color::Magenta, [1.0, 0.0, 1.0]),
    (Color::White, [1.0, 1.0, 1.0]),
    (Color::Black, [0.0, 0.0, 0.0]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    White,
    Black,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Magenta,
        Color::White,
        Color::Black,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn rgb(self) -> [f32; 3] {
        PALETTE[self.index()].1
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::White => "white",
            Color::Black => "black",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    /// Whether box-local pixel `(r, c)` (both in `0..BOX`) belongs to the shape.
    pub fn covers(self, r: usize, c: usize) -> bool {
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        let mid = BOX as f32 / 2.0;
        match self {
            Shape::Square => true,
            // radius 2.6 around the box centre: drops 12 of 36 pixels
            Shape::Circle => (y - mid).powi(2) + (x - mid).powi(2) <= 2.6 * 2.6,
            // apex up; half-width grows by one pixel every two rows
            Shape::Triangle => (x - mid).abs() <= (r as f32 + 1.0) / 2.0,
        }
    }

    /// Full-canvas mask of this shape in half `side` (0 = left, 1 = right).
    pub fn mask(self, side: usize) -> Vec<bool> {
        let mut m = vec![false; CANVAS * CANVAS];
        for r in 0..BOX {
            for c in 0..BOX {
                if self.covers(r, c) {
                    m[(BOX_TOP + r) * CANVAS + BOX_LEFT[side] + c] = true;
                }
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectSpec {
    pub color: Color,
    pub shape: Shape,
}

impl ObjectSpec {
    pub fn new(color: Color, shape: Shape) -> Self {
        Self { color, shape }
    }

    /// All 24 colour-shape combinations.
    pub fn all() -> impl Iterator<Item = ObjectSpec> {
        Color::ALL
            .into_iter()
            .flat_map(|c| Shape::ALL.into_iter().map(move |s| ObjectSpec::new(c, s)))
    }
}

impl fmt::Display for ObjectSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.name(), self.shape.name())
    }
}

/// One- or two-object scene. A single object sits in the left half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SceneSpec {
    pub left: ObjectSpec,
    pub right: Option<ObjectSpec>,
}

impl SceneSpec {
    pub fn single(obj: ObjectSpec) -> Self {
        Self {
            left: obj,
            right: None,
        }
    }

    /// Two-object scene; `None` if both objects are identical.
    pub fn pair(left: ObjectSpec, right: ObjectSpec) -> Option<Self> {
        (left != right).then_some(Self {
            left,
            right: Some(right),
        })
    }

    pub fn objects(&self) -> Vec<ObjectSpec> {
        std::iter::once(self.left).chain(self.right).collect()
    }

    pub fn is_pair(&self) -> bool {
        self.right.is_some()
    }

    /// Same shapes, colours exchanged between the halves.
    pub fn with_colors_swapped(&self) -> Self {
        match self.right {
            Some(r) => Self {
                left: ObjectSpec::new(r.color, self.left.shape),
                right: Some(ObjectSpec::new(self.left.color, r.shape)),
            },
            None => *self,
        }
    }

    /// Every two-object scene (24 x 23).
    pub fn all_pairs() -> Vec<SceneSpec> {
        ObjectSpec::all()
            .flat_map(|l| ObjectSpec::all().filter_map(move |r| SceneSpec::pair(l, r)))
            .collect()
    }

    /// Two-object scenes whose objects differ in colour (504 of them); the
    /// corpus and all binding evaluations draw from this set.
    pub fn distinct_color_pairs() -> Vec<SceneSpec> {
        Self::all_pairs()
            .into_iter()
            .filter(|s| s.right.is_some_and(|r| r.color != s.left.color))
            .collect()
    }
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.right {
            Some(r) => write!(f, "a {} and a {}", self.left, r),
            None => write!(f, "a {}", self.left),
        }
    }
}
