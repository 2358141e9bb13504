"""Second-stage scoring: toy bi-encoder, external score tables, fixture training."""

from services.reranker.bi_encoder import (
    ToyBiEncoder,
    encode,
    load_bi_encoder,
    read_vocab,
    save_bi_encoder,
    score_pair,
    write_vocab,
)
from services.reranker.fixture_data import ToyCollection, generate_toy_collection, write_toy_collection
from services.reranker.fixture_trainer import (
    FixtureConfig,
    FixtureTriple,
    contrastive_gradient,
    contrastive_loss,
    load_fixture_config,
    train_fixture,
    write_fixture,
)
from services.reranker.scorers import (
    BiEncoderScorer,
    ExternalScoreTable,
    ScoredPair,
    Scorer,
    read_scores,
    rerank,
    run_to_pairs,
    write_scores,
)

__all__ = [
    'ToyBiEncoder', 'encode', 'load_bi_encoder', 'read_vocab', 'save_bi_encoder', 'score_pair', 'write_vocab',
    'ToyCollection', 'generate_toy_collection', 'write_toy_collection',
    'FixtureConfig', 'FixtureTriple', 'contrastive_gradient', 'contrastive_loss', 'load_fixture_config',
    'train_fixture', 'write_fixture',
    'BiEncoderScorer', 'ExternalScoreTable', 'ScoredPair', 'Scorer', 'read_scores', 'rerank',
    'run_to_pairs', 'write_scores',
]
