"""Train a tiny sub-word vocabulary and watch words split.

The trainer starts from single characters and merges the adjacent pair with
the best frequency score until the vocabulary reaches its target size.
Segmentation is greedy longest-match-first; continuation pieces carry "##".
"""

from minibert.corpus import Document, DocumentSet
from minibert.tokenizer import decode, encode_sentence, encode_word, train_vocab

text = """
o camiño era longo e o carro era lento
o carro era longo e o camiño era lento
os carros eran lentos e os camiños eran longos
dixeron que o camiño era este e dixeron que o carro era ese
"""

corpus = DocumentSet((Document("demo#0", text.strip(), (1, 4)),))

vocab = train_vocab(corpus, target_size=60, min_frequency=2)
print(f"vocabulary of {vocab.size} pieces; first non-special entries:")
print("  " + " ".join(vocab.pieces[5:25]))

for word in ("camiño", "camiños", "carro", "lentos", "inexistente"):
    print(f"{word:12s} -> {encode_word(vocab, word)}")

sentence = "os camiños eran lentos".split()
seq = encode_sentence(vocab, sentence, add_specials=True)
print("\nencoded with specials:", [vocab.pieces[i] for i in seq.ids])
print("word_start flags:     ", list(seq.word_start))
print("decoded back:         ", decode(vocab, seq.ids))
