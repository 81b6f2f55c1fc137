import numpy as np
import pytest

VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
         "the", "a", "cat", "dog", "bird", "sat", "runs", "flies",
         "on", "under", "mat", "tree", "sky", "blue", "fast", "##s"]

WORDS = ["the", "a", "cat", "dog", "bird", "sat", "runs", "flies",
         "on", "under", "mat", "tree", "sky", "blue", "fast", "dogs"]


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    """Randomly initialized 2-block encoder with H=8 and its tokenizer."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    path = tmp_path_factory.mktemp("ckpt")
    (path / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizerFast.from_pretrained(str(path))
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=8,
                        num_hidden_layers=2, num_attention_heads=2,
                        intermediate_size=16, max_position_embeddings=64)
    torch.manual_seed(0)
    model = BertModel(config)
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def sentence_file(tmp_path_factory):
    """50 in-vocabulary sentences, one per line."""
    rng = np.random.default_rng(4)
    path = tmp_path_factory.mktemp("txt") / "sentences.txt"
    lines = [" ".join(rng.choice(WORDS, size=int(rng.integers(3, 9))))
             for _ in range(50)]
    path.write_text("\n".join(lines) + "\n")
    return path
