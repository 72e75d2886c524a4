"""Built-in lowercase lexicon so corpus generation needs no downloads."""

WORDS = """
about above across after again against almost alone along already also always among animal answer
apple area around asked away baby back ball bank base basket beach bear beauty became become before
began behind being below best better between bird black blue board boat body book both bottom box
boy bread bring brother brown build built call came camp cannot capital care carry case catch cause
center certain chair change check child city class clean clear close cloud coast cold color come
common corner could country course cover cross dark death decide deep door down draw dream dress
drive during early earth east easy edge energy enough even every face fact family farm father field
fight final fire first fish five floor flower follow food foot force forest form found free friend
front full garden gave girl give glass good great green ground group grow half hand happy hard head
heard heart heavy help high hill history hold home horse hour house human idea inch island just keep
kind king know lake land large last later laugh learn leave left letter light line list little live
go in up we beautiful character everything important different education knowledge something
telephone yesterday
""".split()

if len(WORDS) != len(set(WORDS)):
    raise RuntimeError("duplicate lexicon entry")
