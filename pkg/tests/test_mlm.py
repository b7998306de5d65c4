import numpy as np
import pytest

from minibert.mlm import MaskedBatch, MaskingPolicy, mask_batch, pack_sequences
from synthetic import vocab_from_pieces

VOCAB = vocab_from_pieces(*[f"p{i}" for i in range(995)])  # 1000 pieces total


def content_sizes(rows):
    out = []
    for row in rows:
        out.append(int(np.sum(~np.isin(row, [VOCAB.pad_id, VOCAB.cls_id, VOCAB.sep_id]))))
    return out


class TestPolicy:
    def test_rates_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MaskingPolicy(mask_rate=0.8, random_rate=0.1, keep_rate=0.2)

    def test_select_rate_bounds(self):
        with pytest.raises(ValueError):
            MaskingPolicy(select_rate=1.5)


class TestPackSequences:
    def test_260_pieces(self):
        rows = pack_sequences([list(range(5, 265))], seq_len=128)
        assert len(rows) == 3
        assert all(len(r) == 128 for r in rows)
        assert content_sizes(rows) == [126, 126, 8]

    def test_zero_pieces(self):
        assert pack_sequences([[]], seq_len=128) == []

    def test_seq_len_512(self):
        rows = pack_sequences([list(range(5, 1035))], seq_len=512)
        assert content_sizes(rows) == [510, 510, 10]

    def test_row_structure(self):
        rows = pack_sequences([[7, 8, 9]], seq_len=8)
        (row,) = rows
        assert list(row) == [VOCAB.cls_id, 7, 8, 9, VOCAB.sep_id, 0, 0, 0]

    def test_cross_document_packing_default(self):
        rows = pack_sequences([[7] * 4, [8] * 4], seq_len=8)
        assert len(rows) == 2
        assert content_sizes(rows) == [6, 2]

    def test_break_documents(self):
        rows = pack_sequences([[7] * 4, [8] * 4], seq_len=8, break_documents=True)
        assert len(rows) == 2
        assert content_sizes(rows) == [4, 4]

    def test_min_seq_len(self):
        with pytest.raises(ValueError):
            pack_sequences([[7]], seq_len=4)


class TestMaskBatch:
    def _rows(self, n_rows=4, seq_len=32, seed=0):
        rng = np.random.default_rng(seed)
        pieces = rng.integers(5, VOCAB.size, size=n_rows * (seq_len - 2) - 5).tolist()
        return pack_sequences([pieces], seq_len)

    def test_select_rate_zero(self):
        rows = self._rows()
        batch = mask_batch(rows, VOCAB, MaskingPolicy(select_rate=0.0), rng_seed=1)
        assert np.array_equal(batch.input_ids, batch.target_ids)
        assert not batch.loss_mask.any()

    def test_saturation(self):
        rows = self._rows()
        policy = MaskingPolicy(select_rate=1.0, mask_rate=1.0, random_rate=0.0, keep_rate=0.0)
        batch = mask_batch(rows, VOCAB, policy, rng_seed=1)
        eligible = batch.attention_mask & ~np.isin(
            batch.target_ids, [VOCAB.cls_id, VOCAB.sep_id]
        )
        assert np.array_equal(batch.loss_mask, eligible)
        assert (batch.input_ids[eligible] == VOCAB.mask_id).all()

    def test_specials_never_selected(self):
        rows = self._rows()
        policy = MaskingPolicy(select_rate=1.0, mask_rate=1.0, random_rate=0.0, keep_rate=0.0)
        batch = mask_batch(rows, VOCAB, policy, rng_seed=3)
        specials = np.isin(batch.target_ids, [VOCAB.pad_id, VOCAB.cls_id, VOCAB.sep_id])
        assert not batch.loss_mask[specials].any()
        assert np.array_equal(batch.input_ids[specials], batch.target_ids[specials])

    def test_pad_not_attended(self):
        rows = self._rows()
        batch = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=1)
        assert not batch.attention_mask[batch.target_ids == VOCAB.pad_id].any()
        assert (batch.loss_mask <= batch.attention_mask).all()

    def test_target_is_precorruption(self):
        rows = self._rows()
        batch = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=1)
        assert np.array_equal(np.stack(rows), batch.target_ids)
        untouched = ~batch.loss_mask
        assert np.array_equal(batch.input_ids[untouched], batch.target_ids[untouched])

    def test_deterministic_per_seed(self):
        rows = self._rows()
        a = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=7)
        b = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=7)
        c = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=8)
        assert np.array_equal(a.input_ids, b.input_ids)
        assert np.array_equal(a.loss_mask, b.loss_mask)
        assert not np.array_equal(a.input_ids, c.input_ids)

    def test_row_masking_independent_of_batch_grouping(self):
        rows = self._rows(n_rows=6)
        whole = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=9)
        # same seed prefix, masking row i alone with derived seed [9, i]
        alone = mask_batch([rows[3]], VOCAB, MaskingPolicy(), rng_seed=[9, 3])
        # not comparable directly: mask_batch derives [seed, row_index]; row 3
        # alone is [9, 3, 0].  Instead check the documented derivation:
        import numpy as _np

        seq_len = len(rows[3])
        rng = _np.random.default_rng([9, 3])
        select = (rng.random(seq_len) < 0.15) & (
            whole.attention_mask[3]
            & ~_np.isin(whole.target_ids[3], [VOCAB.cls_id, VOCAB.sep_id])
        )
        assert np.array_equal(whole.loss_mask[3], select)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            mask_batch([], VOCAB, MaskingPolicy(), rng_seed=0)

    def test_statistical_rates(self):
        # independent tally over >= 1e5 eligible positions
        rows = self._rows(n_rows=800, seq_len=128)
        batch = mask_batch(rows, VOCAB, MaskingPolicy(), rng_seed=123)
        eligible = batch.attention_mask & ~np.isin(
            batch.target_ids, [VOCAB.cls_id, VOCAB.sep_id]
        )
        n_eligible = int(eligible.sum())
        assert n_eligible >= 10**5
        selected = batch.loss_mask
        n_selected = int(selected.sum())
        frac_selected = n_selected / n_eligible
        masked = selected & (batch.input_ids == VOCAB.mask_id)
        kept = selected & (batch.input_ids == batch.target_ids)
        randomized = selected & ~masked & ~kept
        assert 0.14 <= frac_selected <= 0.16
        assert 0.78 <= masked.sum() / n_selected <= 0.82
        assert 0.08 <= randomized.sum() / n_selected <= 0.12
        assert 0.08 <= kept.sum() / n_selected <= 0.12
        # random replacements stay off the special ids
        assert (batch.input_ids[randomized] >= 5).all()
