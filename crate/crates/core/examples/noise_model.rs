//! Label-noise algebra on its own: corrupt clean labels with the
//! query-confusion flip matrix, estimate the matrix back from the pairs,
//! and see how a classifier's prediction is read under it.
//!
//! `cargo run --example noise_model`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wildlabel::noisemodel::{
    estimate_from_pairs, flip_labels, query_flip_matrix, forward_corrected_loss, forward_corrected_probs, posterior,
};
use wildlabel::taxonomy::ExpressionLabel;

fn main() -> wildlabel::Result<()> {
    let flip = query_flip_matrix();
    println!("flip matrix (row = true label, column = query label):\n{}", flip.to_text());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<ExpressionLabel> = ExpressionLabel::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, 5_000)).collect();
    let noisy = flip_labels(&truth, &flip, &mut rng);
    let pairs: Vec<_> = truth.iter().copied().zip(noisy).collect();
    let estimate = estimate_from_pairs(&pairs, 1.0)?;
    println!("estimated from {} pairs, largest entry error {:.4}\n", pairs.len(), estimate.max_abs_diff(&flip));

    // A model that is fairly sure the face is sad.
    let p = [0.05, 0.05, 0.6, 0.1, 0.1, 0.05, 0.05];
    let seen = forward_corrected_probs(&p, &flip)?;
    println!("{:>9} {:>8} {:>12} {:>16}", "label", "model", "query label", "true | 'anger'");
    let post = posterior(&p, &flip, ExpressionLabel::Anger)?;
    for l in ExpressionLabel::ALL {
        println!("{:>9} {:>8.3} {:>12.3} {:>16.3}", l.name(), p[l.code()], seen[l.code()], post[l.code()]);
    }
    for l in [ExpressionLabel::Sad, ExpressionLabel::Anger, ExpressionLabel::Happy] {
        println!("forward loss if the query said {}: {:.3}", l.name(), forward_corrected_loss(&p, &flip, l)?);
    }
    Ok(())
}
