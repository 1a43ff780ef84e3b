#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "gp_oracle.hpp"
#include "svdscope/generalpoints.hpp"

using namespace svdscope::gp;

namespace {

GpState hand(std::initializer_list<const char*> tokens, int target = 24) {
  std::vector<std::string> t(tokens.begin(), tokens.end());
  return *parse_cards(t, target);
}

std::vector<int> values_of(const GpState& s, const Rule& r) {
  const auto a = card_values(s, r);
  return {a.begin(), a.end()};
}

}  // namespace

TEST(Cards, TokensAndRules) {
  for (const char* t : {"A", "2", "9", "10", "J", "Q", "K"}) EXPECT_EQ(card_token(*parse_card(t)), t);
  EXPECT_FALSE(parse_card("1").has_value());
  EXPECT_FALSE(parse_card("11").has_value());
  EXPECT_FALSE(parse_card("k").has_value());
  EXPECT_EQ(interpret_card(*parse_card("A"), Rule::id()), 1);
  EXPECT_EQ(interpret_card(*parse_card("K"), Rule::id()), 10);
  EXPECT_EQ(interpret_card(*parse_card("J"), Rule::ood()), 11);
  EXPECT_EQ(interpret_card(*parse_card("Q"), Rule::ood()), 12);
  EXPECT_EQ(interpret_card(*parse_card("K"), Rule::ood()), 13);
  EXPECT_FALSE(parse_cards({"A", "2", "3"}).has_value());
}

TEST(Parser, PrecedenceAndAssociativity) {
  EXPECT_EQ(evaluate(parse_equation("2+3*4")), 14);
  EXPECT_EQ(evaluate(parse_equation("(2+3)*4")), 20);
  EXPECT_EQ(evaluate(parse_equation("10-4-3")), 3);
  EXPECT_EQ(evaluate(parse_equation("8/4/2")), 1);
  EXPECT_EQ(evaluate(parse_equation(" 8 / ( 3 - 8 / 3 ) ")), 24);
  EXPECT_EQ(evaluate(parse_equation("1/3")), Rational(1, 3));
}

TEST(Parser, ErrorsCarryPositions) {
  auto pos = [](const char* s) {
    try {
      parse_equation(s);
    } catch (const ParseFailure& e) {
      return static_cast<long>(e.position());
    }
    return -1L;
  };
  EXPECT_EQ(pos("2+"), 2);
  EXPECT_EQ(pos("(2+3"), 4);
  EXPECT_EQ(pos("2+3)"), 3);
  EXPECT_EQ(pos("-2+3"), 0);  // no unary minus
  EXPECT_EQ(pos("2 x 3"), 2);
  EXPECT_EQ(pos(""), 0);
}

TEST(Parser, RenderingRoundTrips) {
  for (const char* s : {"1-(2-3)", "(1-2)-3", "8/(3-8/3)", "2*(3*4)", "(1+2)*(3+4)", "12/(6/3)"}) {
    const Equation e = parse_equation(s);
    const std::string text = to_string(e);
    EXPECT_EQ(evaluate(parse_equation(text)), evaluate(e)) << s;
    EXPECT_EQ(to_string(parse_equation(text)), text);
  }
  EXPECT_EQ(to_string(parse_equation("((1+2))+3")), "1+2+3");
  EXPECT_EQ(to_string(parse_equation("1+(2+3)")), "1+(2+3)");
}

TEST(Validate, ReasonsInOrder) {
  const GpState s = hand({"5", "4", "10", "7"});
  EXPECT_EQ(validate(s, Rule::id(), "(10-7+5)*4").reason, Reason::WrongValue);
  EXPECT_EQ(validate(s, Rule::id(), "(7-5)*10+4").reason, Reason::OK);
  EXPECT_TRUE(validate(s, Rule::id(), "(7-5)*10+4").valid);
  EXPECT_EQ(validate(s, Rule::id(), "(7-5)*10+4+1").reason, Reason::WrongOperandMultiset);
  EXPECT_EQ(validate(s, Rule::id(), "(7-5)*10").reason, Reason::WrongOperandMultiset);
  EXPECT_EQ(validate(s, Rule::id(), "4*(7-5*").reason, Reason::ParseError);
  EXPECT_EQ(validate(s, Rule::id(), "10/(7-7)*5+4").reason, Reason::WrongOperandMultiset);
  EXPECT_EQ(validate(s, Rule::id(), "5/(7-7)+10+4").reason, Reason::WrongOperandMultiset);
  EXPECT_EQ(validate(s, Rule::id(), "(5+4)/(10-10)").reason, Reason::WrongOperandMultiset);
  const GpState z = hand({"5", "5", "4", "10"});
  EXPECT_EQ(validate(z, Rule::id(), "4/(5-5)+10").reason, Reason::DivisionByZero);
  const auto wrong = validate(s, Rule::id(), "5+4+10+7");
  EXPECT_EQ(*wrong.value, 26);
}

TEST(Validate, FaceCardsDependOnRule) {
  const GpState s = hand({"K", "J", "2", "A"});
  EXPECT_TRUE(validate(s, Rule::id(), "10+10+2*1+2").reason == Reason::WrongOperandMultiset);
  EXPECT_TRUE(validate(s, Rule::id(), "(10+10+2)+1").reason == Reason::WrongValue);
  EXPECT_TRUE(validate(s, Rule::ood(), "13+11*1").reason == Reason::WrongOperandMultiset);
  EXPECT_TRUE(validate(s, Rule::ood(), "13+11+2-1").reason == Reason::WrongValue);
  EXPECT_TRUE(validate(s, Rule::ood(), "(13-11)*12").reason == Reason::WrongOperandMultiset);
  EXPECT_TRUE(validate(s, Rule::ood(), "13+11*(2-1)").valid);
}

TEST(Solve, KnownInstances) {
  const auto eq = solve(hand({"3", "3", "8", "8"}), Rule::id());
  ASSERT_TRUE(eq.has_value());
  EXPECT_EQ(evaluate(*eq), 24);
  EXPECT_FALSE(solve(hand({"A", "A", "A", "A"}), Rule::id()).has_value());
  const GpState worked = hand({"5", "4", "10", "7"});
  const auto w = solve(worked, Rule::id());
  ASSERT_TRUE(w.has_value());
  EXPECT_TRUE(validate(worked, Rule::id(), to_string(*w)).valid);
  EXPECT_TRUE(solve(hand({"A", "2", "3", "4"}, 10), Rule::id()).has_value());
}

TEST(Solve, AgreesWithOracleOnSample) {
  svdscope::Rng rng(9);
  for (int i = 0; i < 150; ++i) {
    GpState s;
    for (auto& c : s.cards) c.rank = static_cast<int>(rng.below(13)) + 1;
    for (const Rule& r : {Rule::id(), Rule::ood()}) {
      const auto eq = solve(s, r);
      ASSERT_EQ(eq.has_value(), gp_oracle::solvable(values_of(s, r), 24));
      if (eq) {
        EXPECT_TRUE(validate(s, r, to_string(*eq)).valid);
      }
    }
  }
}

TEST(Deal, SeededAndSolvable) {
  const auto a = deal(5, 40, Rule::ood(), true);
  const auto b = deal(5, 40, Rule::ood(), true);
  ASSERT_EQ(a.size(), 40u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].cards, b[i].cards);
    EXPECT_TRUE(solve(a[i], Rule::ood()).has_value());
  }
  EXPECT_NE(deal(6, 1, Rule::id(), false)[0].cards, deal(7, 1, Rule::id(), false)[0].cards);
  EXPECT_THROW(deal(1, 0, Rule::id(), false), svdscope::DomainError);
}

TEST(Extract, MarkerAndScan) {
  EXPECT_EQ(extract_equation("I think... Answer: (7-5)*10+4 = 24."), "(7-5)*10+4");
  EXPECT_EQ(extract_equation("Answer: 1+1\nthen Answer: 2*12.\nmore"), "2*12");
  EXPECT_EQ(extract_equation("Answer:   "), std::nullopt);
  EXPECT_EQ(extract_equation("we get 3*8 and finally (7-5)*10+4 = 24", std::nullopt), "(7-5)*10+4");
  EXPECT_EQ(extract_equation("no marker; try 2*(3+9)", "Answer:"), "2*(3+9)");
  EXPECT_EQ(extract_equation("nothing here"), std::nullopt);
  EXPECT_EQ(extract_equation("Final: 4*6", "Final:"), "4*6");
}

TEST(Score, SummaryAndFlags) {
  std::stringstream in;
  in << R"({"cards":["5","4","10","7"],"response":"Answer: (7-5)*10+4"})" << "\n"
     << R"({"cards":["5","4","10","7"],"response":"Answer: 5+4+10+7"})" << "\n"
     << "\n"
     << R"j({"cards":["K","J","2","A"],"rule":"ood","response":"so 13+11*(2-1)"})j" << "\n"
     << "not json\n"
     << R"({"cards":["5","4"],"response":"Answer: 9"})" << "\n";
  const auto s = score_transcripts(in, Rule::id());
  EXPECT_EQ(s.n, 5u);
  EXPECT_EQ(s.ok, 2u);
  EXPECT_DOUBLE_EQ(s.success_rate, 0.4);
  EXPECT_EQ(s.records[1].record["reason"], "WrongValue");
  EXPECT_EQ(s.records[1].record["value"], "26");
  EXPECT_EQ(s.records[2].record["equation"], "13+11*(2-1)");
  EXPECT_TRUE(s.records[3].malformed);
  EXPECT_EQ(s.records[3].record["reason"], "NoEquationFound");
  EXPECT_TRUE(s.records[4].malformed);
  std::ostringstream out;
  write_scores(out, s);
  EXPECT_NE(out.str().find(R"({"n":5,"success_rate":0.4})"), std::string::npos);
  std::stringstream empty("\n\n");
  EXPECT_THROW(score_transcripts(empty, Rule::id()), svdscope::Error);
}
