#include <stdio.h>
#include <string.h>
#include "engage.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); return 1; } } while (0)

int main(void) {
    EngageEngine *e = NULL;
    CHECK(engage_engine_new(NULL, NULL, &e) == ENGAGE_STATUS_OK);
    CHECK(engage_engine_feed_line(e, "{\"seq\":1,\"t\":0,\"kind\":\"ModeSelect\",\"payload\":{\"mode\":\"talker\"},\"src\":\"client\"}") == ENGAGE_STATUS_OK);
    CHECK(engage_engine_feed_line(e, "not json") == ENGAGE_STATUS_DECODE);
    char *line = NULL;
    CHECK(engage_engine_poll(e, &line) == ENGAGE_STATUS_OK);
    CHECK(strstr(line, "\"Error\"") != NULL);
    engage_string_free(line);
    CHECK(engage_engine_poll(e, &line) == ENGAGE_STATUS_EMPTY);

    double values[] = {1, 2, 3, 2, 3, 4};
    size_t sizes[] = {3, 3};
    EngageAnova a;
    CHECK(engage_anova(values, sizes, 2, &a) == ENGAGE_STATUS_OK);
    CHECK(a.df_between == 1 && a.df_within == 4);
    CHECK(a.f > 1.4999999 && a.f < 1.5000001);

    EngageTracking t;
    CHECK(engage_classify_tracking("host cup 0 500 0 0\n", &t) == ENGAGE_STATUS_OK);
    CHECK(t.quick_looks == 1);
    CHECK(engage_classify_tracking("host cup 9 3 0 0\n", &t) == ENGAGE_STATUS_INVALID);
    CHECK(strlen(engage_last_error()) > 0);

    engage_engine_free(e);
    printf("ok %s\n", engage_version());
    return 0;
}
