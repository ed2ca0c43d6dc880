//! Exact computations with tree and one-loop BCFW cells of the amplituhedron.
//!
//! This crate constructs BCFW cells of the (tree and one-loop) amplituhedron
//! from colored chord diagrams, entirely in exact rational arithmetic, and
//! verifies the structural claims that make those cells a tiling: positivity,
//! canonical (domino) matrix forms with their sign rules, positroids and their
//! recursions, injectivity of the amplituhedron map on each cell, pairwise
//! separation by twistor functionaries, and boundary matching between
//! neighboring cells.
//!
//! # Layout
//!
//! - [`exact_core`] — rationals, labeled matrices, minors, ranks, projective
//!   vectors. No floating point anywhere.
//! - [`loopy_grassmannian`] — pairs (C ⋮ D) of tree and loop blocks,
//!   nonnegativity and rank predicates, the positivity-preserving column
//!   operations, hiding-particle embeddings, and positive-point sampling.
//! - [`chord_diagrams`] — colored chord diagrams, validation, enumeration,
//!   statistics, subdiagrams, generation sequences, and the shift/matching
//!   combinatorics on boundaries.
//! - [`bcfw_construction`] — the BCFW product, forward limit, degenerate
//!   variants, cell points from coordinates, domino forms, conversions, and
//!   sign checking.
//! - [`positroid`] — positroids of points and cells, the product/forward-limit
//!   positroid recursions, coindependence queries.
//! - [`amplituhedron_twistor`] — positive Z matrices, the amplituhedron map,
//!   twistor evaluation, the boundary locus predicate, duality with the
//!   B-amplituhedron, and the cell-inversion solver.
//! - [`functionary_engine`] — symbolic twistor brackets and polynomials, the
//!   three promotions, permissibility classification, separator construction,
//!   and exact evaluation.
//! - [`cli_lab`] — reproducible experiment runner shared by the `amplab`
//!   binary and the examples.
//!
//! # Runnable examples
//!
//! Each major capability has a runnable example under `examples/`:
//!
//! ```text
//! cargo run --example enumerate_cells      # diagram enumeration vs. closed-form counts
//! cargo run --example sample_positive      # positive loopy matrices and their minors
//! cargo run --example build_cell_point     # cell points from diagrams and coordinates
//! cargo run --example domino_forms         # canonical forms and the sign rules
//! cargo run --example positroids           # positroid recursion vs. direct minors
//! cargo run --example invert_image_point   # recovering a cell and coordinates from Y
//! cargo run --example separators           # separating functionaries between neighbors
//! cargo run --example boundary_match       # matched boundaries via degenerate maps
//! ```
//!
//! The thin `amplab` binary exposes the same machinery as subcommands
//! (`enumerate`, `verify`, `tile`, `boundary`, `invert`, `positroid`,
//! `separator`) with JSON/CSV output for scripting.

pub mod bcfw_construction;
pub mod chord_diagrams;
pub mod exact_core;
pub mod loopy_grassmannian;
