#include "bqcsim/wire.hpp"

#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "bqcsim/proto.hpp"

namespace bqcsim {
namespace {

std::vector<ChannelSpec> duplex(PartyId a, PartyId b, bool priv = false) {
  return {{a, b, ChannelKind::Classical, priv},
          {b, a, ChannelKind::Classical, priv}};
}

Proc ping(PartyContext ctx) {
  ctx.send(PartyId::Server1, MsgKind::BitList, std::vector<std::uint8_t>{1});
  co_await ctx.recv(PartyId::Server1, MsgKind::BitList);
  ctx.send(PartyId::Server1, MsgKind::BitList, std::vector<std::uint8_t>{0});
}

Proc pong(PartyContext ctx) {
  co_await ctx.recv(PartyId::Client, MsgKind::BitList);
  ctx.send(PartyId::Client, MsgKind::BitList, std::vector<std::uint8_t>{1, 1});
  co_await ctx.recv(PartyId::Client, MsgKind::BitList);
}

Proc silent(PartyContext ctx) {
  co_await ctx.recv(PartyId::Client, MsgKind::AngleList);
}

TEST(Schedule, PingPongTranscript) {
  RegisterPool pool;
  Network net(pool, duplex(PartyId::Client, PartyId::Server1));
  SeededRandom s(1), q(2);
  std::map<PartyId, Proc> parties;
  parties.emplace(PartyId::Client,
                  ping(PartyContext(PartyId::Client, net, s, q)));
  parties.emplace(PartyId::Server1,
                  pong(PartyContext(PartyId::Server1, net, s, q)));
  run_schedule(parties);
  ASSERT_EQ(net.transcript().size(), 3u);
  EXPECT_EQ(net.transcript()[0].channel.from, PartyId::Client);
  EXPECT_EQ(net.transcript()[1].channel.from, PartyId::Server1);
  EXPECT_EQ(net.transcript()[2].channel.from, PartyId::Client);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(net.transcript()[i].seq, i);
}

TEST(Schedule, DeadlockNamesWaiter) {
  RegisterPool pool;
  Network net(pool, duplex(PartyId::Client, PartyId::Server1));
  SeededRandom s(1), q(2);
  std::map<PartyId, Proc> parties;
  parties.emplace(PartyId::Server1,
                  silent(PartyContext(PartyId::Server1, net, s, q)));
  try {
    run_schedule(parties);
    FAIL() << "expected deadlock";
  } catch (const DeadlockError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Server1 waiting for AngleList from Client"),
              std::string::npos);
  }
}

TEST(Send, ChannelAndKindContracts) {
  RegisterPool pool;
  Network net(pool, duplex(PartyId::Client, PartyId::Server1));
  // unregistered channel
  EXPECT_THROW(net.send(PartyId::Client, PartyId::Server2, MsgKind::BitList,
                        std::vector<std::uint8_t>{}),
               ConfigError);
  // qubits on a classical channel
  QubitId q = pool.alloc_plus_theta(Angle(0));
  net.assign_custody(q, PartyId::Client);
  EXPECT_THROW(net.send(PartyId::Client, PartyId::Server1,
                        MsgKind::QubitTransfer, std::vector<QubitId>{q}),
               ConfigError);
  // payload type must match kind
  EXPECT_THROW(net.send(PartyId::Client, PartyId::Server1, MsgKind::BitList,
                        std::vector<Angle>{Angle(0)}),
               ContractViolation);
}

TEST(Send, CustodyTransfer) {
  RegisterPool pool;
  std::vector<ChannelSpec> topo =
      duplex(PartyId::Client, PartyId::Server1);
  topo.push_back({PartyId::Client, PartyId::Server1, ChannelKind::Quantum,
                  false});
  Network net(pool, topo);
  QubitId q = pool.alloc_plus_theta(Angle(0));
  net.assign_custody(q, PartyId::Client);
  net.send(PartyId::Client, PartyId::Server1, MsgKind::QubitTransfer,
           std::vector<QubitId>{q});
  EXPECT_EQ(net.custody(q), PartyId::Server1);
  // sender lost the qubit
  EXPECT_THROW(net.send(PartyId::Client, PartyId::Server1,
                        MsgKind::QubitTransfer, std::vector<QubitId>{q}),
               ContractViolation);
  ASSERT_EQ(net.custody_log().size(), 2u);
  EXPECT_EQ(net.custody_log()[1].to, PartyId::Server1);
}

TEST(Custody, PartyCannotTouchForeignQubit) {
  RegisterPool pool;
  Network net(pool, duplex(PartyId::Client, PartyId::Server1));
  SeededRandom s(1), q(2);
  PartyContext client(PartyId::Client, net, s, q);
  PartyContext server(PartyId::Server1, net, s, q);
  QubitId held = client.alloc_plus_theta(Angle(0));
  EXPECT_THROW(server.measure_angle(held, Angle(0)), ContractViolation);
  EXPECT_EQ(client.measure_angle(held, Angle(0)), 0);
}

TEST(AdversaryView, FiltersAndMonotone) {
  RegisterPool pool;
  std::vector<ChannelSpec> topo = duplex(PartyId::Client, PartyId::Server1,
                                         /*priv=*/true);
  auto open_channel = duplex(PartyId::Client, PartyId::Server2);
  topo.insert(topo.end(), open_channel.begin(), open_channel.end());
  Network net(pool, topo);
  net.send(PartyId::Client, PartyId::Server1, MsgKind::BitList,
           std::vector<std::uint8_t>{1});
  net.send(PartyId::Client, PartyId::Server2, MsgKind::BitList,
           std::vector<std::uint8_t>{0});

  const Transcript everyone = adversary_view(net.transcript(),
                                             {PartyId::Client,
                                              PartyId::Server1,
                                              PartyId::Server2});
  EXPECT_EQ(everyone.size(), 2u);
  const Transcript outsider = adversary_view(net.transcript(), {});
  ASSERT_EQ(outsider.size(), 1u);  // only the non-private message
  EXPECT_EQ(outsider[0].channel.to, PartyId::Server2);
  const Transcript s2 = adversary_view(net.transcript(), {PartyId::Server2});
  EXPECT_EQ(s2.size(), 1u);
  const Transcript s1 = adversary_view(net.transcript(), {PartyId::Server1});
  EXPECT_EQ(s1.size(), 2u);

  // view monotonicity
  for (const auto& m : outsider) {
    bool found = false;
    for (const auto& n : s2)
      if (n.seq == m.seq) found = true;
    EXPECT_TRUE(found);
  }
}

TEST(Replay, SameSeedsSameTranscript) {
  Circuit c;
  c.wires = 1;
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(3)});
  c.gates.push_back({Circuit::Gate::Kind::J, 0, Angle(5)});
  const Pattern p = compile(c);
  const RunOutcome a = execute_seeded(Protocol::NewDouble, p, {}, 555);
  const RunOutcome b = execute_seeded(Protocol::NewDouble, p, {}, 555);
  ASSERT_EQ(a.transcript.size(), b.transcript.size());
  EXPECT_EQ(transcript_to_json(a.transcript).dump(),
            transcript_to_json(b.transcript).dump());
  const RunOutcome c2 = execute_seeded(Protocol::NewDouble, p, {}, 556);
  EXPECT_NE(transcript_to_json(a.transcript).dump(),
            transcript_to_json(c2.transcript).dump());
}

TEST(TranscriptJson, SchemaFields) {
  RegisterPool pool;
  Network net(pool, duplex(PartyId::Client, PartyId::Server1));
  net.send(PartyId::Client, PartyId::Server1, MsgKind::DeltaMsg,
           DeltaPayload{2, Angle(5)});
  const auto j = transcript_to_json(net.transcript());
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].at("seq"), 0);
  EXPECT_EQ(j[0].at("from"), "Client");
  EXPECT_EQ(j[0].at("to"), "Server1");
  EXPECT_EQ(j[0].at("kind"), "DeltaMsg");
  EXPECT_EQ(j[0].at("private"), false);
  EXPECT_EQ(j[0].at("payload").at("angle_eighths"), 5);
}

TEST(Topology, ValidationPerProtocol) {
  // a Server1<->Server2 link in the BFK double protocol is rejected
  auto bad = standard_topology(Protocol::BfkDouble, {});
  bad.push_back({PartyId::Server1, PartyId::Server2, ChannelKind::Classical,
                 false});
  EXPECT_THROW(validate_topology(Protocol::BfkDouble, bad), ConfigError);
  EXPECT_NO_THROW(validate_topology(Protocol::BfkDouble,
                                    standard_topology(Protocol::BfkDouble,
                                                      {})));
  // no quantum channel may reach the classical client in the new protocol
  auto bad2 = standard_topology(Protocol::NewDouble, {});
  bad2.push_back({PartyId::TrustedCenter, PartyId::Client,
                  ChannelKind::Quantum, false});
  EXPECT_THROW(validate_topology(Protocol::NewDouble, bad2), ConfigError);
  // the triple protocol requires the client's quantum links
  EXPECT_NO_THROW(validate_topology(Protocol::Triple,
                                    standard_topology(Protocol::Triple, {})));
  EXPECT_THROW(validate_topology(Protocol::Triple,
                                 standard_topology(Protocol::Single, {})),
               ConfigError);
}

}  // namespace
}  // namespace bqcsim
