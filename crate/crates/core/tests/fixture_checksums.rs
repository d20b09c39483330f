use affectlab_core::stimuli::FIXTURE_FILES;
use sha2::{Digest, Sha256};

const PINNED: [(&str, &str); 7] = [
    ("anet20.csv", "16969bc675fa731589f3a5b768f8b9a8e611ff405cc410db5921d6b1f013143f"),
    ("anet20_predictions.csv", "2b8718a856eddd7b9ca690ac7c6453c33cf6e6dc96fb1df6db5185e777dab246"),
    ("words20.csv", "54e817b743ae8441ee4aff6def057eeb23efa16641b494847c14f04e521d507c"),
    ("words20_predictions.csv", "876d9affba41e89e27e4fe00902bda8eaefc994a94d8a920350f0c5004cc419e"),
    ("word_mapping.csv", "af84987e3ad5f56e6456a1e78ac444426ac45c0c5785f129f9b5454d449124fc"),
    ("octants.csv", "1f66fb7d88001933d0aa619e269924507f497a26c546ad9dd258d9719fa2fda3"),
    ("elicitation.csv", "b34b8df08205fbccfe8082b5d8194bb2d3b14522c2434fd730ed0319621bcbdf"),
];

#[test]
fn embedded_fixtures_are_unchanged() {
    assert_eq!(FIXTURE_FILES.len(), PINNED.len());
    for ((name, content), (pinned_name, digest)) in FIXTURE_FILES.iter().zip(PINNED) {
        assert_eq!(*name, pinned_name);
        assert_eq!(hex::encode(Sha256::digest(content.as_bytes())), digest, "{name}");
    }
}
