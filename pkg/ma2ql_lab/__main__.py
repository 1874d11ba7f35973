from ma2ql_lab.main import main

main()
