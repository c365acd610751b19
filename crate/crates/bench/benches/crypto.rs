use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use slim_abc::{Dealer, PartyId};

fn signatures(c: &mut Criterion) {
    let mut g = c.benchmark_group("threshold_signature");
    for n in [4usize, 16, 64] {
        let dealer = Dealer::with_seed(n, 1).unwrap();
        let v = dealer.verifier();
        let msg = b"bench message";
        let shares: Vec<_> = v.params().parties().map(|p| dealer.party_key(p).sig_share(msg)).collect();
        let key = dealer.party_key(PartyId(0));
        g.bench_with_input(BenchmarkId::new("share", n), &n, |b, _| b.iter(|| key.sig_share(black_box(msg))));
        g.bench_with_input(BenchmarkId::new("verify_share", n), &n, |b, _| {
            b.iter(|| v.verify_share(black_box(msg), PartyId(0), &shares[0]))
        });
        g.bench_with_input(BenchmarkId::new("combine", n), &n, |b, _| {
            b.iter(|| v.combine_shares(black_box(msg), &shares).unwrap())
        });
        let sig = v.combine_shares(msg, &shares).unwrap();
        g.bench_with_input(BenchmarkId::new("verify", n), &n, |b, _| {
            b.iter(|| v.verify_signature(black_box(msg), &sig))
        });
    }
    g.finish();
}

fn coins(c: &mut Criterion) {
    let mut g = c.benchmark_group("coin");
    for n in [4usize, 16, 64] {
        let dealer = Dealer::with_seed(n, 2).unwrap();
        let v = dealer.verifier();
        let name = b"coin";
        let shares: Vec<_> = v.params().parties().map(|p| dealer.party_key(p).coin_share(name)).collect();
        g.bench_with_input(BenchmarkId::new("toss_bit", n), &n, |b, _| {
            b.iter(|| v.coin_toss_bit(black_box(name), &shares).unwrap())
        });
        let kappa = v.params().f + 1;
        g.bench_with_input(BenchmarkId::new("committee", n), &n, |b, _| {
            b.iter(|| v.coin_toss_committee(black_box(name), &shares, n, kappa).unwrap())
        });
    }
    g.finish();
}

fn tpke(c: &mut Criterion) {
    let mut g = c.benchmark_group("tpke");
    let dealer = Dealer::with_seed(16, 3).unwrap();
    let v = dealer.verifier();
    for len in [256usize, 4096, 65536] {
        let plain = vec![7u8; len];
        let ct = v.tpke_enc(&plain);
        let shares: Vec<_> = v.params().parties().map(|p| dealer.party_key(p).tpke_dec_share(&ct)).collect();
        g.bench_with_input(BenchmarkId::new("enc", len), &len, |b, _| b.iter(|| v.tpke_enc(black_box(&plain))));
        g.bench_with_input(BenchmarkId::new("dec", len), &len, |b, _| {
            b.iter(|| v.tpke_dec(black_box(&ct), &shares).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, signatures, coins, tpke);
criterion_main!(benches);
